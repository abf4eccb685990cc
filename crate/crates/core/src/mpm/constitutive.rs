use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Svd3, Vec3};

/// Singular-value floor used when a fixed-corotated element inverts.
pub(crate) const INVERSION_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElasticityKind {
    FixedCorotated,
    NeoHookean,
    Stvk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PlasticityKind {
    None,
    /// Radial return on the deviatoric Hencky strain.
    VonMises { yield_stress: f64 },
    /// Cone in Hencky-strain space. `cohesion` is a dimensionless volumetric
    /// strain the material tolerates in tension; zero for loose sand.
    DruckerPrager { friction_angle_deg: f64, cohesion: f64 },
}

/// Named material presets for the showcased behaviours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialPreset {
    Elastic,
    Plasticine,
    Sand,
    Rigid,
    Fracture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstitutiveModel {
    pub elasticity: ElasticityKind,
    /// Young's modulus (Pa).
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Density (kg/m³).
    pub density: f64,
    pub plasticity: PlasticityKind,
}

impl MaterialPreset {
    /// Preset parameters. Densities and moduli are documented defaults, not
    /// measured values.
    pub fn model(self) -> ConstitutiveModel {
        let base = ConstitutiveModel {
            elasticity: ElasticityKind::FixedCorotated,
            youngs_modulus: 1e5,
            poisson_ratio: 0.3,
            density: 1000.0,
            plasticity: PlasticityKind::None,
        };
        match self {
            MaterialPreset::Elastic => base,
            MaterialPreset::Plasticine => ConstitutiveModel {
                youngs_modulus: 2e5,
                plasticity: PlasticityKind::VonMises { yield_stress: 2e3 },
                ..base
            },
            MaterialPreset::Sand => ConstitutiveModel {
                density: 1600.0,
                plasticity: PlasticityKind::DruckerPrager {
                    friction_angle_deg: 30.0,
                    cohesion: 0.0,
                },
                ..base
            },
            MaterialPreset::Rigid => ConstitutiveModel {
                youngs_modulus: 1e8,
                ..base
            },
            MaterialPreset::Fracture => ConstitutiveModel {
                youngs_modulus: 1e6,
                plasticity: PlasticityKind::DruckerPrager {
                    friction_angle_deg: 40.0,
                    cohesion: 0.0,
                },
                ..base
            },
        }
    }
}

impl ConstitutiveModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidMaterial(m));
        if !(self.youngs_modulus > 0.0 && self.youngs_modulus.is_finite()) {
            return bad(format!("Young's modulus {} must be positive", self.youngs_modulus));
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return bad(format!("Poisson ratio {} outside (0, 0.5)", self.poisson_ratio));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad(format!("density {} must be positive", self.density));
        }
        match self.plasticity {
            PlasticityKind::None => {}
            PlasticityKind::VonMises { yield_stress } => {
                if !(yield_stress > 0.0) {
                    return bad(format!("yield stress {yield_stress} must be positive"));
                }
            }
            PlasticityKind::DruckerPrager {
                friction_angle_deg,
                cohesion,
            } => {
                if !(friction_angle_deg > 0.0 && friction_angle_deg < 90.0) {
                    return bad(format!("friction angle {friction_angle_deg}° outside (0°, 90°)"));
                }
                if !(cohesion >= 0.0) {
                    return bad(format!("cohesion {cohesion} must be non-negative"));
                }
            }
        }
        Ok(())
    }

    /// Lamé parameters `(mu, lambda)`.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        (e / (2.0 * (1.0 + nu)), e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))
    }

    /// Dilational wave speed `sqrt((λ + 2μ) / ρ)`.
    pub fn wave_speed(&self) -> f64 {
        let (mu, lambda) = self.lame();
        ((lambda + 2.0 * mu) / self.density).sqrt()
    }

    /// Replaces an inverted fixed-corotated `F` by its clamped SVD
    /// reconstruction; errors for models whose energy is undefined there.
    pub(crate) fn admissible(&self, f: &Mat3, index: usize) -> Result<Mat3> {
        let det = f.determinant();
        if det > 0.0 {
            return Ok(*f);
        }
        match self.elasticity {
            ElasticityKind::FixedCorotated => {
                let svd = Svd3::new(f);
                Ok(svd.compose(&svd.sigma.map(|s| s.max(INVERSION_FLOOR))))
            }
            ElasticityKind::Stvk => Ok(*f),
            ElasticityKind::NeoHookean => Err(Error::InvertedDeformation { index, det }),
        }
    }

    /// Strain energy density `Ψ(F)`.
    pub fn energy(&self, f: &Mat3) -> Result<f64> {
        let f = self.admissible(f, 0)?;
        let (mu, lambda) = self.lame();
        let j = f.determinant();
        Ok(match self.elasticity {
            ElasticityKind::FixedCorotated => {
                let s = Svd3::new(&f).sigma;
                mu * (s - Vec3::repeat(1.0)).norm_squared() + 0.5 * lambda * (j - 1.0).powi(2)
            }
            ElasticityKind::NeoHookean => {
                let lj = j.ln();
                0.5 * mu * ((f.transpose() * f).trace() - 3.0) - mu * lj + 0.5 * lambda * lj * lj
            }
            ElasticityKind::Stvk => {
                let e = (f.transpose() * f - Mat3::identity()) * 0.5;
                mu * e.norm_squared() + 0.5 * lambda * e.trace().powi(2)
            }
        })
    }

    /// First Piola-Kirchhoff stress `P = ∂Ψ/∂F`.
    pub fn first_piola(&self, f: &Mat3) -> Result<Mat3> {
        let f = self.admissible(f, 0)?;
        let (mu, lambda) = self.lame();
        let j = f.determinant();
        Ok(match self.elasticity {
            ElasticityKind::FixedCorotated => {
                let r = Svd3::new(&f).rotation();
                let cof = cofactor(&f);
                (f - r) * (2.0 * mu) + cof * (lambda * (j - 1.0))
            }
            ElasticityKind::NeoHookean => {
                let f_inv_t = f.try_inverse().expect("det > 0").transpose();
                (f - f_inv_t) * mu + f_inv_t * (lambda * j.ln())
            }
            ElasticityKind::Stvk => {
                let e = (f.transpose() * f - Mat3::identity()) * 0.5;
                f * (e * (2.0 * mu) + Mat3::identity() * (lambda * e.trace()))
            }
        })
    }

    /// Kirchhoff stress `τ = P Fᵀ`.
    pub fn kirchhoff(&self, f: &Mat3) -> Result<Mat3> {
        let f_adm = self.admissible(f, 0)?;
        let (mu, lambda) = self.lame();
        let j = f_adm.determinant();
        Ok(match self.elasticity {
            ElasticityKind::FixedCorotated => {
                if f_adm == Mat3::identity() {
                    return Ok(Mat3::zeros());
                }
                let r = Svd3::new(&f_adm).rotation();
                (f_adm - r) * f_adm.transpose() * (2.0 * mu) + Mat3::identity() * (lambda * (j - 1.0) * j)
            }
            ElasticityKind::NeoHookean => {
                (f_adm * f_adm.transpose() - Mat3::identity()) * mu + Mat3::identity() * (lambda * j.ln())
            }
            ElasticityKind::Stvk => self.first_piola(&f_adm)? * f_adm.transpose(),
        })
    }
}

/// `det(F) F⁻ᵀ`, computed without dividing by the determinant.
fn cofactor(f: &Mat3) -> Mat3 {
    let c0 = f.column(1).cross(&f.column(2));
    let c1 = f.column(2).cross(&f.column(0));
    let c2 = f.column(0).cross(&f.column(1));
    Mat3::from_rows(&[c0.transpose(), c1.transpose(), c2.transpose()]).transpose()
}
