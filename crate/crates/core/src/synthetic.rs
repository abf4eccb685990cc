//! Small procedural scenes for tests, demos and the CLI smoke pipeline.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gaussians::{render, render_hard_depth, Camera, GaussianKernel, RenderSettings};
use crate::math::Vec3;
use crate::optim::SupervisionView;

/// `n³` isotropic kernels filling an axis-aligned cube. Colors follow the
/// position inside the cube.
pub fn cube(n: usize, side: f64, center: Vec3, opacity: f64) -> Vec<GaussianKernel> {
    let spacing = side / n as f64;
    let lo = center - Vec3::repeat(0.5 * side - 0.5 * spacing);
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let t = Vec3::new(i as f64, j as f64, k as f64) / (n.max(2) - 1) as f64;
                let pos = lo + Vec3::new(i as f64, j as f64, k as f64) * spacing;
                let color = Vec3::new(0.2 + 0.6 * t.x, 0.2 + 0.6 * t.y, 0.2 + 0.6 * t.z);
                out.push(GaussianKernel::isotropic(pos, 0.6 * spacing, opacity, color));
            }
        }
    }
    out
}

/// The bundled 512-kernel unit cube centered at the origin.
pub fn default_cube() -> Vec<GaussianKernel> {
    cube(8, 1.0, Vec3::zeros(), 0.9)
}

/// Orbit rig placement for the four supervision cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Rig {
    pub target: [f64; 3],
    pub radius: f64,
    pub elevation: f64,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for Rig {
    fn default() -> Self {
        Self {
            target: [0.0; 3],
            radius: 4.0,
            elevation: 0.3,
            focal: 80.0,
            width: 64,
            height: 64,
        }
    }
}

impl Rig {
    pub fn cameras(&self) -> Result<[Camera; 4]> {
        Camera::supervision_rig(
            Vec3::from(self.target),
            self.radius,
            self.elevation,
            self.focal,
            self.width,
            self.height,
        )
    }

    /// Camera at an arbitrary azimuth on the same orbit.
    pub fn camera_at(&self, azimuth: f64) -> Result<Camera> {
        Camera::orbit(
            Vec3::from(self.target),
            self.radius,
            azimuth,
            self.elevation,
            self.focal,
            self.width,
            self.height,
        )
    }
}

/// Renders the scene from the rig: color images plus hard-depth maps used as
/// depth targets. View 0 is the input view.
pub fn render_views(kernels: &[GaussianKernel], rig: &Rig, delta: f64, settings: &RenderSettings) -> Result<Vec<SupervisionView>> {
    rig.cameras()?
        .into_iter()
        .enumerate()
        .map(|(a, camera)| {
            let image = render(kernels, &camera, settings)?.color;
            let depth = render_hard_depth(kernels, &camera, delta, settings)?;
            Ok(SupervisionView {
                camera,
                image,
                depth: Some(depth),
                is_input_view: a == 0,
            })
        })
        .collect()
}
