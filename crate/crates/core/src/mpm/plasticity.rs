use super::{ConstitutiveModel, PlasticityKind};
use crate::error::{Error, Result};
use crate::math::{Mat3, Svd3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnMapResult {
    pub elastic: Mat3,
    /// Magnitude of the plastic strain increment removed by the projection.
    pub plastic_increment: f64,
}

fn hencky(f: &Mat3) -> Result<(Svd3, Vec3)> {
    let svd = Svd3::new(f);
    if svd.sigma.iter().any(|&s| s <= 0.0) {
        return Err(Error::InvertedDeformation {
            index: 0,
            det: f.determinant(),
        });
    }
    let eps = svd.sigma.map(f64::ln);
    Ok((svd, eps))
}

fn deviator(eps: &Vec3) -> Vec3 {
    eps - Vec3::repeat(eps.sum() / 3.0)
}

/// Drucker-Prager cone slope and volumetric coupling factor.
fn drucker_prager_coefficients(model: &ConstitutiveModel, friction_angle_deg: f64) -> (f64, f64) {
    let (mu, lambda) = model.lame();
    let s = friction_angle_deg.to_radians().sin();
    let alpha = (2.0f64 / 3.0).sqrt() * 2.0 * s / (3.0 - s);
    let kappa = (3.0 * lambda + 2.0 * mu) / (2.0 * mu);
    (alpha, kappa)
}

/// Yield function evaluated on `F`; non-positive means admissible. Always
/// `0` for purely elastic models.
pub fn yield_function(f: &Mat3, model: &ConstitutiveModel) -> Result<f64> {
    match model.plasticity {
        PlasticityKind::None => Ok(0.0),
        PlasticityKind::VonMises { yield_stress } => {
            let (mu, _) = model.lame();
            let (_, eps) = hencky(f)?;
            Ok(deviator(&eps).norm() - yield_stress / (2.0 * mu))
        }
        PlasticityKind::DruckerPrager {
            friction_angle_deg,
            cohesion,
        } => {
            let (alpha, kappa) = drucker_prager_coefficients(model, friction_angle_deg);
            let (_, eps) = hencky(f)?;
            Ok(deviator(&eps).norm() + alpha * kappa * (eps.sum() - cohesion))
        }
    }
}

/// Projects a trial deformation gradient onto the yield surface. Admissible
/// inputs are returned unchanged (bit for bit).
pub fn return_map(f_trial: &Mat3, model: &ConstitutiveModel) -> Result<ReturnMapResult> {
    let unchanged = ReturnMapResult {
        elastic: *f_trial,
        plastic_increment: 0.0,
    };
    match model.plasticity {
        PlasticityKind::None => Ok(unchanged),
        PlasticityKind::VonMises { yield_stress } => {
            let (mu, _) = model.lame();
            let (svd, eps) = hencky(f_trial)?;
            let dev = deviator(&eps);
            let norm = dev.norm();
            let excess = norm - yield_stress / (2.0 * mu);
            if excess <= 0.0 {
                return Ok(unchanged);
            }
            let projected = eps - dev * (excess / norm);
            Ok(ReturnMapResult {
                elastic: svd.compose(&projected.map(f64::exp)),
                plastic_increment: excess,
            })
        }
        PlasticityKind::DruckerPrager {
            friction_angle_deg,
            cohesion,
        } => {
            let (alpha, kappa) = drucker_prager_coefficients(model, friction_angle_deg);
            let (svd, eps) = hencky(f_trial)?;
            let trace = eps.sum();
            if trace > cohesion {
                // tension beyond cohesion: project to the cone tip
                let tip = Vec3::repeat(cohesion / 3.0);
                return Ok(ReturnMapResult {
                    elastic: svd.compose(&tip.map(f64::exp)),
                    plastic_increment: (eps - tip).norm(),
                });
            }
            let dev = deviator(&eps);
            let norm = dev.norm();
            let gamma = norm + alpha * kappa * (trace - cohesion);
            if gamma <= 0.0 {
                return Ok(unchanged);
            }
            let projected = eps - dev * (gamma / norm);
            Ok(ReturnMapResult {
                elastic: svd.compose(&projected.map(f64::exp)),
                plastic_increment: gamma,
            })
        }
    }
}
