use crate::gaussians::{GaussianKernel, KernelGrad};
use crate::math::{covariance_to_rotation_scale, logit, quat_to_rotation, rotation_to_quat, sigmoid, Mat3, Vec3};

/// Opacities are kept this far from 0 and 1 so their logit stays finite.
const OPACITY_MARGIN: f64 = 1e-6;

/// Unconstrained optimisation variables of one kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub position: Vec3,
    /// Pre-sigmoid opacity.
    pub opacity_logit: f64,
    /// Per-axis log standard deviation.
    pub log_scale: Vec3,
    /// Rotation quaternion `[w, x, y, z]`, not necessarily normalised.
    pub rotation: [f64; 4],
    pub color: Vec3,
}

impl KernelParams {
    pub fn from_kernel(k: &GaussianKernel) -> Self {
        let (r, s) = covariance_to_rotation_scale(&k.world_covariance);
        Self {
            position: k.center,
            opacity_logit: logit(k.opacity.clamp(OPACITY_MARGIN, 1.0 - OPACITY_MARGIN)),
            log_scale: s.map(|v| v.max(f64::MIN_POSITIVE).ln()),
            rotation: rotation_to_quat(&r),
            color: k.color,
        }
    }

    pub fn covariance(&self) -> Mat3 {
        let r = quat_to_rotation(self.rotation);
        let s2 = self.log_scale.map(|l| (2.0 * l).exp());
        r * Mat3::from_diagonal(&s2) * r.transpose()
    }

    /// Writes the parameters into `k`, which is treated as undeformed.
    pub fn apply(&self, k: &mut GaussianKernel) {
        let h = self.covariance();
        k.center = self.position;
        k.rest_center = self.position;
        k.opacity = sigmoid(self.opacity_logit);
        k.covariance = h;
        k.world_covariance = h;
        k.deformation = Mat3::identity();
        k.color = self.color;
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.color.iter().all(|v| v.is_finite())
    }
}

/// Gradient in parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamGrad {
    pub position: Vec3,
    pub opacity_logit: f64,
    pub log_scale: Vec3,
    pub rotation: [f64; 4],
    pub color: Vec3,
}

/// `∂R/∂(w, x, y, z)` of the rotation of a unit quaternion.
fn rotation_partials(u: [f64; 4]) -> [Mat3; 4] {
    let [w, x, y, z] = u;
    [
        Mat3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0,
        Mat3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0,
        Mat3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0,
        Mat3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0,
    ]
}

/// Chains a render-input gradient through the parameterisation.
pub fn param_grad(p: &KernelParams, g: &KernelGrad) -> ParamGrad {
    let q = p.rotation;
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let u = q.map(|c| c / norm);
    let r = quat_to_rotation(u);
    let s2 = p.log_scale.map(|l| (2.0 * l).exp());
    let gs = g.world_covariance;

    // Σ = R diag(s²) Rᵀ
    let d_r = (gs + gs.transpose()) * r * Mat3::from_diagonal(&s2);
    let rt_g_r = r.transpose() * gs * r;
    let log_scale = Vec3::new(2.0 * s2.x * rt_g_r[(0, 0)], 2.0 * s2.y * rt_g_r[(1, 1)], 2.0 * s2.z * rt_g_r[(2, 2)]);

    let partials = rotation_partials(u);
    let d_u: [f64; 4] = std::array::from_fn(|k| partials[k].component_mul(&d_r).sum());
    let dot: f64 = d_u.iter().zip(&u).map(|(a, b)| a * b).sum();
    let rotation = std::array::from_fn(|k| (d_u[k] - u[k] * dot) / norm);

    let sigma = sigmoid(p.opacity_logit);
    ParamGrad {
        position: g.center,
        opacity_logit: g.opacity * sigma * (1.0 - sigma),
        log_scale,
        rotation,
        color: g.color,
    }
}
