//! Gaussian splat data model, projection and compositing renderers.

mod camera;
pub mod grad;
mod kernel;
mod project;
mod render;

pub use camera::Camera;
pub use grad::{hard_depth_backward, render_backward, KernelGrad};
pub use kernel::GaussianKernel;
pub use project::{project_kernel, Splat2D};
pub use render::{render, render_hard_depth, PreparedScene, RenderOutput, RenderSettings};
