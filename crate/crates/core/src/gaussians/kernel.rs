use crate::error::{Error, Result};
use crate::math::{is_finite_mat, is_finite_vec, min_eigenvalue, Mat3, Vec3};

/// One anisotropic splat primitive.
///
/// `covariance` is the material-space covariance `H`; `world_covariance` is
/// what the renderer projects. The two coincide until the kernel is deformed
/// by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub center: Vec3,
    pub opacity: f64,
    pub covariance: Mat3,
    pub color: Vec3,
    pub rest_center: Vec3,
    pub deformation: Mat3,
    pub world_covariance: Mat3,
}

impl GaussianKernel {
    pub fn new(center: Vec3, opacity: f64, covariance: Mat3, color: Vec3) -> Self {
        Self {
            center,
            opacity,
            covariance,
            color,
            rest_center: center,
            deformation: Mat3::identity(),
            world_covariance: covariance,
        }
    }

    pub fn isotropic(center: Vec3, scale: f64, opacity: f64, color: Vec3) -> Self {
        Self::new(center, opacity, Mat3::identity() * (scale * scale), color)
    }

    /// `F H Fᵀ`, the covariance implied by the deformation gradient.
    pub fn deformed_covariance(&self) -> Mat3 {
        self.deformation * self.covariance * self.deformation.transpose()
    }

    pub fn is_finite(&self) -> bool {
        is_finite_vec(&self.center)
            && self.opacity.is_finite()
            && is_finite_mat(&self.covariance)
            && is_finite_vec(&self.color)
            && is_finite_vec(&self.rest_center)
            && is_finite_mat(&self.deformation)
            && is_finite_mat(&self.world_covariance)
    }

    /// Checks every data-model invariant, naming `index` in the error.
    pub fn validate(&self, index: usize) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidKernel { index, reason });
        if !self.is_finite() {
            return fail("non-finite value".into());
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return fail(format!("opacity {} outside [0, 1]", self.opacity));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return fail(format!("color {:?} outside [0, 1]", self.color.as_slice()));
        }
        for (name, m) in [("covariance", &self.covariance), ("world covariance", &self.world_covariance)] {
            if (m - m.transpose()).amax() > 1e-9 * m.amax().max(f64::MIN_POSITIVE) {
                return fail(format!("{name} is not symmetric"));
            }
            if min_eigenvalue(m) <= 1e-12 * m.amax() {
                return fail(format!("{name} is not positive definite"));
            }
        }
        if self.deformation.determinant() <= 0.0 {
            return fail("deformation gradient has non-positive determinant".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_names_the_offending_kernel() {
        let mut k = GaussianKernel::isotropic(Vec3::zeros(), 0.1, 0.5, Vec3::new(0.2, 0.3, 0.4));
        assert!(k.validate(0).is_ok());
        k.covariance[(1, 1)] = -1.0;
        let err = k.validate(7).unwrap_err().to_string();
        assert!(err.contains("kernel 7"), "{err}");
        let mut k = GaussianKernel::isotropic(Vec3::zeros(), 0.1, 0.5, Vec3::zeros());
        k.center.x = f64::NAN;
        assert!(k.validate(3).is_err());
    }
}
