use nalgebra::{Matrix2, Matrix2x3, Vector2};

use super::{Camera, GaussianKernel};
use crate::math::{Mat3, Vec3};

/// A kernel projected to the image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean: Vector2<f64>,
    /// Projected covariance `J W h Wᵀ Jᵀ` before the isotropic floor.
    pub covariance: Matrix2<f64>,
    /// Inverse of the floored covariance, used for evaluation.
    pub conic: Matrix2<f64>,
    /// Euclidean distance from the camera center to the kernel center.
    pub depth: f64,
    pub kernel: usize,
    /// Kernel center in camera coordinates.
    pub camera_point: Vec3,
}

impl Splat2D {
    /// Unnormalised Gaussian weight at pixel position `(px, py)`.
    #[inline]
    pub fn weight(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean.x;
        let dy = py - self.mean.y;
        let a = &self.conic;
        let q = a[(0, 0)] * dx * dx + (a[(0, 1)] + a[(1, 0)]) * dx * dy + a[(1, 1)] * dy * dy;
        (-0.5 * q).exp()
    }

    /// Radius beyond which the weight drops under `min_weight`.
    pub fn cutoff_radius(&self, min_weight: f64) -> f64 {
        if min_weight <= 0.0 {
            return f64::INFINITY;
        }
        // largest eigenvalue of the floored covariance = 1 / smallest of conic
        let a = &self.conic;
        let tr = a[(0, 0)] + a[(1, 1)];
        let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
        let lambda_min = 0.5 * tr - disc;
        if lambda_min <= 0.0 {
            return f64::INFINITY;
        }
        (2.0 * (1.0 / min_weight).ln() / lambda_min).sqrt()
    }
}

/// Local affine approximation of the pinhole projection at camera point `t`.
pub(crate) fn projection_jacobian(camera: &Camera, t: &Vec3) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * t.x * iz * iz,
        0.0,
        camera.fy * iz,
        -camera.fy * t.y * iz * iz,
    )
}

/// Derivatives of the projection Jacobian with respect to each camera-frame
/// coordinate.
pub(crate) fn projection_jacobian_derivatives(camera: &Camera, t: &Vec3) -> [Matrix2x3<f64>; 3] {
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let dx = Matrix2x3::new(0.0, 0.0, -camera.fx * iz2, 0.0, 0.0, 0.0);
    let dy = Matrix2x3::new(0.0, 0.0, 0.0, 0.0, 0.0, -camera.fy * iz2);
    let dz = Matrix2x3::new(
        -camera.fx * iz2,
        0.0,
        2.0 * camera.fx * t.x * iz3,
        0.0,
        -camera.fy * iz2,
        2.0 * camera.fy * t.y * iz3,
    );
    [dx, dy, dz]
}

/// Projects `kernel` through `camera`. Returns `None` when the kernel center
/// is not in front of the near plane, or when the floored 2D covariance is
/// not invertible.
pub fn project_kernel(
    kernel: &GaussianKernel,
    camera: &Camera,
    index: usize,
    covariance_floor: f64,
    near: f64,
) -> Option<Splat2D> {
    let t = camera.to_camera(&kernel.center);
    if !(t.z > near) {
        return None;
    }
    let j = projection_jacobian(camera, &t);
    let w: Mat3 = camera.world_to_camera_rotation();
    let m = w * kernel.world_covariance * w.transpose();
    let cov = j * m * j.transpose();
    let cov = (cov + cov.transpose()) * 0.5;
    let floored = cov + Matrix2::identity() * covariance_floor;
    let det = floored.determinant();
    if !(det > 0.0) || floored[(0, 0)] <= 0.0 {
        return None;
    }
    let conic = Matrix2::new(floored[(1, 1)], -floored[(0, 1)], -floored[(1, 0)], floored[(0, 0)]) / det;
    let mean = Vector2::new(
        camera.fx * t.x / t.z + camera.cx,
        camera.fy * t.y / t.z + camera.cy,
    );
    Some(Splat2D {
        mean,
        covariance: cov,
        conic,
        depth: (kernel.center - camera.position).norm(),
        kernel: index,
        camera_point: t,
    })
}
