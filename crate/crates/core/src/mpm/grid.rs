use crate::error::{Error, Result};
use crate::math::Vec3;

/// Eulerian background grid. Node `(i, j, k)` sits at `origin + h (i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpmGrid {
    pub origin: Vec3,
    pub spacing: f64,
    pub dims: [usize; 3],
    pub mass: Vec<f64>,
    /// Momentum during the transfer, velocity after the update.
    pub velocity: Vec<Vec3>,
    /// Internal elastic force from the last transfer, kept for inspection.
    pub internal_force: Vec<Vec3>,
    pub external_force: Vec<Vec3>,
}

/// Copyable node layout of a grid, detached from its node data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub origin: Vec3,
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl GridGeometry {
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }
}

impl MpmGrid {
    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            origin: self.origin,
            spacing: self.spacing,
            dims: self.dims,
        }
    }

    pub fn new(origin: Vec3, spacing: f64, dims: [usize; 3]) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid spacing {spacing} must be positive")));
        }
        if dims.iter().any(|&d| d < 3) {
            return Err(Error::InvalidArgument(format!("grid dims {dims:?} must be at least 3 per axis")));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin,
            spacing,
            dims,
            mass: vec![0.0; n],
            velocity: vec![Vec3::zeros(); n],
            internal_force: vec![Vec3::zeros(); n],
            external_force: vec![Vec3::zeros(); n],
        })
    }

    pub fn node_count(&self) -> usize {
        self.mass.len()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let k = index % self.dims[2];
        let j = (index / self.dims[2]) % self.dims[1];
        let i = index / (self.dims[1] * self.dims[2]);
        [i, j, k]
    }

    #[inline]
    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    pub fn clear(&mut self) {
        self.mass.iter_mut().for_each(|m| *m = 0.0);
        for v in [&mut self.velocity, &mut self.internal_force, &mut self.external_force] {
            v.iter_mut().for_each(|x| *x = Vec3::zeros());
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.mass.iter().zip(&self.velocity).map(|(m, v)| v * *m).sum()
    }
}
