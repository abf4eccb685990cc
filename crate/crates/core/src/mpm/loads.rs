use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Sphere { center: Vec3, radius: f64 },
    Box { min: Vec3, max: Vec3 },
}

impl Region {
    pub fn contains(&self, x: &Vec3) -> bool {
        match self {
            Region::Sphere { center, radius } => (x - center).norm_squared() <= radius * radius,
            Region::Box { min, max } => (0..3).all(|a| x[a] >= min[a] && x[a] <= max[a]),
        }
    }

    pub fn center(&self) -> Vec3 {
        match self {
            Region::Sphere { center, .. } => *center,
            Region::Box { min, max } => (min + max) * 0.5,
        }
    }

    fn is_non_empty(&self) -> bool {
        match self {
            Region::Sphere { radius, .. } => *radius > 0.0,
            Region::Box { min, max } => (0..3).all(|a| max[a] > min[a]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadKind {
    /// Uniform acceleration `magnitude · direction` (m/s²).
    Gravity,
    /// Total force `magnitude · direction` (N) shared by the particles in the
    /// region in proportion to their mass.
    PointForce,
    /// Torque `magnitude · direction` (N·m) about the region center, realised
    /// as `f(x) = τ × (x − c) / Σ ‖x − c‖²` over the region's particles.
    Torque,
    /// Velocity change `magnitude · direction` (m/s) applied once, at the
    /// step containing `start`.
    VelocityImpulse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalLoad {
    pub kind: LoadKind,
    pub magnitude: f64,
    /// Force direction, or torque axis.
    pub direction: Vec3,
    /// `None` applies the load to every particle.
    #[serde(default)]
    pub region: Option<Region>,
    #[serde(default)]
    pub start: f64,
    #[serde(default = "forever", skip_serializing_if = "is_forever")]
    pub end: f64,
}

fn forever() -> f64 {
    f64::INFINITY
}

fn is_forever(t: &f64) -> bool {
    *t == f64::INFINITY
}

impl ExternalLoad {
    pub fn gravity(g: Vec3) -> Self {
        let magnitude = g.norm();
        Self {
            kind: LoadKind::Gravity,
            magnitude,
            direction: if magnitude > 0.0 { g / magnitude } else { -Vec3::y() },
            region: None,
            start: 0.0,
            end: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start <= self.end) {
            return Err(Error::InvalidLoad(format!("window [{}, {}] is reversed", self.start, self.end)));
        }
        if !self.magnitude.is_finite() {
            return Err(Error::InvalidLoad("magnitude must be finite".into()));
        }
        if self.direction.norm() == 0.0 && self.magnitude != 0.0 {
            return Err(Error::InvalidLoad("direction must be non-zero".into()));
        }
        if let Some(r) = &self.region {
            if !r.is_non_empty() {
                return Err(Error::InvalidLoad(format!("empty region {r:?}")));
            }
        }
        Ok(())
    }

    pub fn vector(&self) -> Vec3 {
        let n = self.direction.norm();
        if n == 0.0 {
            Vec3::zeros()
        } else {
            self.direction * (self.magnitude / n)
        }
    }

    pub fn active_at(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    pub fn applies_to(&self, x: &Vec3) -> bool {
        self.region.as_ref().is_none_or(|r| r.contains(x))
    }
}
