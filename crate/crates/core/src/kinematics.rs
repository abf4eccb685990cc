//! Binding splats to MPM particles and evolving their geometry.
//!
//! Particle `i` carries kernel `i` for `i < kernel_count`; particles past that
//! are interior fillers that add mass and stress but never render.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::GaussianKernel;
use crate::math::{floor_eigenvalues, min_eigenvalue, symmetrize, Mat3, Vec3};
use crate::mpm::{ConstitutiveModel, ExternalLoad, MpmGrid, MpmParticle, MpmState};

/// Which representation drives the world covariance during simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// `h ← h + Δt (∇v h + h ∇vᵀ)` every substep.
    #[default]
    Incremental,
    /// `h = F H Fᵀ` from the particle deformation gradient.
    FromDeformation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FillOptions {
    /// Sample filler particles in the enclosed interior.
    pub fill: bool,
    /// Voxels along the longest axis of the occupancy grid.
    pub resolution: usize,
    /// Accumulated opacity density above which a voxel counts as occupied.
    pub threshold: f64,
}

impl Default for FillOptions {
    fn default() -> Self {
        Self {
            fill: false,
            resolution: 32,
            threshold: 0.02,
        }
    }
}

/// One splat-to-particle association.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundKernel {
    pub kernel: Option<usize>,
    pub particle: usize,
}

impl BoundKernel {
    pub fn is_interior(&self) -> bool {
        self.kernel.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct Binding {
    pub particles: Vec<MpmParticle>,
    pub kernel_count: usize,
    /// Occupied (or enclosed) volume shared by all particles.
    pub volume: f64,
}

impl Binding {
    pub fn bound(&self) -> impl Iterator<Item = BoundKernel> + '_ {
        (0..self.particles.len()).map(|p| BoundKernel {
            kernel: (p < self.kernel_count).then_some(p),
            particle: p,
        })
    }

    pub fn filler_count(&self) -> usize {
        self.particles.len() - self.kernel_count
    }
}

/// Voxelised opacity density over the padded bounding box of a splat cloud.
struct Occupancy {
    origin: Vec3,
    voxel: f64,
    dims: [usize; 3],
    density: Vec<f64>,
    has_kernel: Vec<bool>,
    /// Distance past a kernel center at which its density falls to the
    /// threshold, maximised over kernels.
    reach: f64,
}

impl Occupancy {
    fn build(kernels: &[GaussianKernel], resolution: usize, threshold: f64) -> Self {
        let max_std = kernels
            .iter()
            .map(|k| k.world_covariance.symmetric_eigenvalues().max().max(0.0).sqrt())
            .fold(0.0, f64::max);
        let pad = 3.0 * max_std;
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for k in kernels {
            lo = lo.inf(&k.center);
            hi = hi.sup(&k.center);
        }
        lo -= Vec3::repeat(pad);
        hi += Vec3::repeat(pad);
        let extent = (hi - lo).max().max(f64::MIN_POSITIVE);
        let voxel = extent / resolution.max(1) as f64;
        let dims = [0, 1, 2].map(|a| (((hi[a] - lo[a]) / voxel).ceil() as usize).max(1));
        let n = dims[0] * dims[1] * dims[2];
        let mut occ = Self {
            origin: lo,
            voxel,
            dims,
            density: vec![0.0; n],
            has_kernel: vec![false; n],
            reach: 0.0,
        };
        for k in kernels {
            let inv = match k.world_covariance.try_inverse() {
                Some(inv) => inv,
                None => continue,
            };
            let r = 3.0 * k.world_covariance.symmetric_eigenvalues().max().max(0.0).sqrt();
            let a = occ.voxel_of(&(k.center - Vec3::repeat(r)));
            let b = occ.voxel_of(&(k.center + Vec3::repeat(r)));
            for i in a[0]..=b[0] {
                for j in a[1]..=b[1] {
                    for l in a[2]..=b[2] {
                        let d = occ.center(i, j, l) - k.center;
                        let idx = occ.index(i, j, l);
                        occ.density[idx] += k.opacity * (-0.5 * d.dot(&(inv * d))).exp();
                    }
                }
            }
            if k.opacity > threshold {
                let std = (r / 3.0).max(0.0);
                occ.reach = occ.reach.max(std * (2.0 * (k.opacity / threshold).ln()).sqrt());
            }
            let c = occ.voxel_of(&k.center);
            let idx = occ.index(c[0], c[1], c[2]);
            occ.has_kernel[idx] = true;
        }
        occ
    }

    fn voxel_of(&self, x: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let v = ((x[a] - self.origin[a]) / self.voxel).floor();
            (v.max(0.0) as usize).min(self.dims[a] - 1)
        })
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.voxel
    }

    /// Occupied voxels plus those enclosed by occupied voxels along all six
    /// axis directions.
    fn solid(&self, threshold: f64) -> (Vec<bool>, Vec<bool>) {
        let occupied: Vec<bool> = self.density.iter().map(|&d| d >= threshold).collect();
        let [nx, ny, nz] = self.dims;
        let mut enclosed = vec![false; occupied.len()];
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let idx = self.index(i, j, k);
                    if occupied[idx] {
                        continue;
                    }
                    let cell = [i as isize, j as isize, k as isize];
                    enclosed[idx] = (0..3).all(|axis| {
                        [-1isize, 1].iter().all(|&step| {
                            let mut c = cell;
                            loop {
                                c[axis] += step;
                                if c[axis] < 0 || c[axis] >= self.dims[axis] as isize {
                                    return false;
                                }
                                if occupied[self.index(c[0] as usize, c[1] as usize, c[2] as usize)] {
                                    return true;
                                }
                            }
                        })
                    });
                }
            }
        }
        (occupied, enclosed)
    }

    /// Voxels whose whole neighbourhood within `reach` is solid, which keeps
    /// fillers inside the surface the kernels describe.
    fn interior(&self, solid: &[bool]) -> Vec<bool> {
        let r = self.reach / self.voxel + 0.5 * 3f64.sqrt();
        let n = r.ceil() as isize;
        let mut offsets = Vec::new();
        for a in -n..=n {
            for b in -n..=n {
                for c in -n..=n {
                    if ((a * a + b * b + c * c) as f64).sqrt() <= r {
                        offsets.push([a, b, c]);
                    }
                }
            }
        }
        let [nx, ny, nz] = self.dims;
        let mut out = vec![false; solid.len()];
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let idx = self.index(i, j, k);
                    if !solid[idx] {
                        continue;
                    }
                    out[idx] = offsets.iter().all(|o| {
                        let c = [i as isize + o[0], j as isize + o[1], k as isize + o[2]];
                        (0..3).all(|a| c[a] >= 0 && c[a] < self.dims[a] as isize)
                            && solid[self.index(c[0] as usize, c[1] as usize, c[2] as usize)]
                    });
                }
            }
        }
        out
    }
}

/// Turns kernels into MPM particles at rest, optionally adding interior
/// fillers. Every particle gets the same share of the estimated solid volume.
pub fn bind(kernels: &[GaussianKernel], model: &ConstitutiveModel, material: usize, options: &FillOptions) -> Result<Binding> {
    if kernels.is_empty() {
        return Err(Error::Empty("cannot bind an empty kernel set".into()));
    }
    for (i, k) in kernels.iter().enumerate() {
        k.validate(i)?;
    }
    model.validate()?;
    let occ = Occupancy::build(kernels, options.resolution, options.threshold);
    let (occupied, enclosed) = occ.solid(options.threshold);
    let solid: Vec<bool> = occupied.iter().zip(&enclosed).map(|(a, b)| *a || *b).collect();
    let voxel_volume = occ.voxel.powi(3);
    let solid_voxels = solid.iter().filter(|s| **s).count();

    let mut positions: Vec<Vec3> = kernels.iter().map(|k| k.center).collect();
    if options.fill {
        let interior = occ.interior(&solid);
        let [nx, ny, nz] = occ.dims;
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let idx = occ.index(i, j, k);
                    if interior[idx] && !occ.has_kernel[idx] {
                        positions.push(occ.center(i, j, k));
                    }
                }
            }
        }
    }
    let volume = (solid_voxels as f64 * voxel_volume).max(voxel_volume);
    let per_particle = volume / positions.len() as f64;
    let particles = positions
        .into_iter()
        .map(|x| MpmParticle::at_rest(x, model.density * per_particle, per_particle, material))
        .collect();
    Ok(Binding {
        particles,
        kernel_count: kernels.len(),
        volume,
    })
}

/// One explicit step of the world-covariance ODE, symmetrised and floored at
/// `1e-10 · tr(h)/3`.
pub fn update_covariance(h: &Mat3, grad_v: &Mat3, dt: f64) -> Mat3 {
    let next = h + (grad_v * h + h * grad_v.transpose()) * dt;
    condition(&next)
}

fn condition(h: &Mat3) -> Mat3 {
    let h = symmetrize(h);
    let floor = 1e-10 * h.trace() / 3.0;
    if min_eigenvalue(&h) >= floor {
        h
    } else {
        floor_eigenvalues(&h, floor.max(f64::MIN_POSITIVE))
    }
}

/// Copies particle state back onto the kernels after one substep of size `dt`.
pub fn sync(kernels: &mut [GaussianKernel], particles: &[MpmParticle], dt: f64, mode: CovarianceMode) -> Result<()> {
    if particles.len() < kernels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} kernels but only {} particles",
            kernels.len(),
            particles.len()
        )));
    }
    kernels.par_iter_mut().zip(particles.par_iter()).for_each(|(k, p)| {
        k.center = p.position;
        k.deformation = p.deformation;
        k.world_covariance = match mode {
            CovarianceMode::Incremental => update_covariance(&k.world_covariance, &p.velocity_gradient, dt),
            CovarianceMode::FromDeformation => condition(&k.deformed_covariance()),
        };
    });
    Ok(())
}

/// Smallest grid with spacing `h` enclosing `points` plus `padding` cells on
/// every side.
pub fn fit_grid(points: &[Vec3], spacing: f64, padding: usize) -> Result<MpmGrid> {
    if points.is_empty() {
        return Err(Error::Empty("no points to enclose".into()));
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let pad = padding as f64 * spacing;
    let origin = lo - Vec3::repeat(pad);
    let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a] + 2.0 * pad) / spacing).ceil() as usize + 1);
    MpmGrid::new(origin, spacing, dims)
}

/// Kernels coupled to a running MPM simulation.
#[derive(Debug, Clone)]
pub struct PhysicalScene {
    pub kernels: Vec<GaussianKernel>,
    pub state: MpmState,
    pub mode: CovarianceMode,
}

impl PhysicalScene {
    pub fn new(kernels: Vec<GaussianKernel>, binding: Binding, materials: Vec<ConstitutiveModel>, grid: MpmGrid) -> Result<Self> {
        if binding.kernel_count != kernels.len() {
            return Err(Error::DimensionMismatch(format!(
                "binding covers {} kernels, scene has {}",
                binding.kernel_count,
                kernels.len()
            )));
        }
        Ok(Self {
            kernels,
            state: MpmState::new(binding.particles, materials, grid)?,
            mode: CovarianceMode::default(),
        })
    }

    /// Advances by `dt`, syncing the kernels after every CFL substep.
    pub fn advance(&mut self, dt: f64, loads: &[ExternalLoad]) -> Result<usize> {
        let (n, h) = self.state.plan_substeps(dt);
        if n > 1 {
            log::debug!("advancing {dt:e} s in {n} substeps");
        }
        for _ in 0..n {
            self.state.substep(h, loads)?;
            sync(&mut self.kernels, &self.state.particles, h, self.mode)?;
        }
        Ok(n)
    }
}
