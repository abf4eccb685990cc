//! Physics-driven Gaussian splat dynamics.
//!
//! The crate is organised around the stages of the pipeline:
//!
//! - [`gaussians`]: splat data model, camera projection and the compositing
//!   renderers (color, expected depth, hard depth, alpha), with analytic
//!   backward passes.
//! - [`mpm`]: explicit Material Point Method with quadratic B-spline
//!   transfers, hyperelastic stress, plastic return mapping, colliders and
//!   external loads.
//! - [`kinematics`]: binding splats to MPM particles and evolving their
//!   centers and world-space covariances.
//! - [`optim`]: geometry-aware refinement with a patchwise hard-depth loss and
//!   an L1 + D-SSIM color loss.
//! - [`propagate`]: model-free keyframe enhancement math (blending, extended
//!   attention, nearest-neighbour correspondence, propagation, injection
//!   policy).
//! - [`metrics`]: z-score normalisation and SSIM.
//! - [`io`]: PLY, PFM, PNG, camera JSON, particle dumps and feature tensors.

pub mod error;
pub mod gaussians;
pub mod image;
pub mod io;
pub mod kinematics;
pub mod math;
pub mod metrics;
pub mod mpm;
pub mod optim;
pub mod propagate;
pub mod synthetic;

pub use error::{Error, Result};
pub use image::Image;
