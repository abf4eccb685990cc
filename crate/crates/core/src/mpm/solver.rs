use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    bspline_weights, grid_boundary, return_map, Collider, ConstitutiveModel, ElasticityKind, ExternalLoad, LoadKind,
    MpmGrid, MpmParticle, Stencil,
};
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transfer {
    #[default]
    Apic,
    Pic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferOptions {
    pub transfer: Transfer,
    /// Nodes lighter than this are treated as empty.
    pub mass_epsilon: f64,
}

struct Scatter {
    stencil: Stencil,
    mass: f64,
    velocity: Vec3,
    affine: Mat3,
    position: Vec3,
    /// `−V⁰ τ`; the node force is this times `∇w`.
    stress_term: Mat3,
    external: Vec3,
}

fn with_index(e: Error, index: usize) -> Error {
    match e {
        Error::InvertedDeformation { det, .. } => Error::InvertedDeformation { index, det },
        other => other,
    }
}

/// Per-particle external forces (N) from the non-gravity loads active at
/// `time`, plus the uniform acceleration from region-free gravity.
fn external_forces(particles: &[MpmParticle], loads: &[ExternalLoad], time: f64) -> (Vec<Vec3>, Vec3) {
    let mut forces = vec![Vec3::zeros(); particles.len()];
    let mut acceleration = Vec3::zeros();
    for load in loads.iter().filter(|l| l.active_at(time)) {
        let vector = load.vector();
        match load.kind {
            LoadKind::Gravity => {
                if load.region.is_none() {
                    acceleration += vector;
                } else {
                    for (f, p) in forces.iter_mut().zip(particles) {
                        if load.applies_to(&p.position) {
                            *f += vector * p.mass;
                        }
                    }
                }
            }
            LoadKind::PointForce => {
                let total: f64 = particles.iter().filter(|p| load.applies_to(&p.position)).map(|p| p.mass).sum();
                if total > 0.0 {
                    for (f, p) in forces.iter_mut().zip(particles) {
                        if load.applies_to(&p.position) {
                            *f += vector * (p.mass / total);
                        }
                    }
                }
            }
            LoadKind::Torque => {
                let center = match &load.region {
                    Some(r) => r.center(),
                    None => {
                        let m: f64 = particles.iter().map(|p| p.mass).sum();
                        particles.iter().map(|p| p.position * p.mass).sum::<Vec3>() / m
                    }
                };
                let denom: f64 = particles
                    .iter()
                    .filter(|p| load.applies_to(&p.position))
                    .map(|p| (p.position - center).norm_squared())
                    .sum();
                if denom > 0.0 {
                    for (f, p) in forces.iter_mut().zip(particles) {
                        if load.applies_to(&p.position) {
                            *f += vector.cross(&(p.position - center)) / denom;
                        }
                    }
                }
            }
            LoadKind::VelocityImpulse => {}
        }
    }
    (forces, acceleration)
}

/// Particle-to-grid transfer followed by the forward-Euler grid momentum
/// update `m_i (v_i⁺ − v_i) / Δt = −Σ_p V_p⁰ τ_p ∇w_ip + f_i^ext`.
#[allow(clippy::too_many_arguments)]
pub fn p2g(
    particles: &[MpmParticle],
    materials: &[ConstitutiveModel],
    grid: &mut MpmGrid,
    dt: f64,
    loads: &[ExternalLoad],
    time: f64,
    options: &TransferOptions,
) -> Result<()> {
    let (forces, acceleration) = external_forces(particles, loads, time);
    let prepared: Vec<Result<Scatter>> = particles
        .par_iter()
        .zip(forces.par_iter())
        .enumerate()
        .map(|(index, (p, ext))| {
            let stencil = bspline_weights(&p.position, grid, index)?;
            let model = &materials[p.material];
            let tau = model.kirchhoff(&p.deformation).map_err(|e| with_index(e, index))?;
            Ok(Scatter {
                stencil,
                mass: p.mass,
                velocity: p.velocity,
                affine: match options.transfer {
                    Transfer::Apic => p.affine,
                    Transfer::Pic => Mat3::zeros(),
                },
                position: p.position,
                stress_term: tau * (-p.rest_volume),
                external: *ext,
            })
        })
        .collect();

    grid.clear();
    let geometry = grid.geometry();
    // fixed particle-major reduction order keeps the scatter deterministic
    for s in prepared {
        let s = s?;
        s.stencil.for_each(&geometry, |node, x_i, w, dw| {
            let wm = w * s.mass;
            grid.mass[node] += wm;
            grid.velocity[node] += (s.velocity + s.affine * (x_i - s.position)) * wm;
            grid.internal_force[node] += s.stress_term * dw;
            grid.external_force[node] += s.external * w;
        });
    }

    for node in 0..grid.node_count() {
        let m = grid.mass[node];
        if m < options.mass_epsilon || m == 0.0 {
            grid.velocity[node] = Vec3::zeros();
            continue;
        }
        let v = grid.velocity[node] / m;
        let f = grid.internal_force[node] + grid.external_force[node];
        grid.velocity[node] = v + f * (dt / m) + acceleration * dt;
    }
    Ok(())
}

/// Grid-to-particle transfer: particle velocity, affine matrix, velocity
/// gradient, advection, deformation update and plastic return mapping.
pub fn g2p(
    particles: &mut [MpmParticle],
    materials: &[ConstitutiveModel],
    grid: &MpmGrid,
    dt: f64,
    options: &TransferOptions,
) -> Result<()> {
    let geometry = grid.geometry();
    let inv_d = 4.0 / (grid.spacing * grid.spacing);
    let results: Vec<Result<()>> = particles
        .par_iter_mut()
        .enumerate()
        .map(|(index, p)| {
            let stencil = bspline_weights(&p.position, grid, index)?;
            let mut v = Vec3::zeros();
            let mut b = Mat3::zeros();
            let mut grad_v = Mat3::zeros();
            stencil.for_each(&geometry, |node, x_i, w, dw| {
                let vi = grid.velocity[node];
                v += vi * w;
                b += vi * (x_i - p.position).transpose() * w;
                grad_v += vi * dw.transpose();
            });
            p.velocity = v;
            p.affine = match options.transfer {
                Transfer::Apic => b * inv_d,
                Transfer::Pic => Mat3::zeros(),
            };
            p.velocity_gradient = grad_v;
            p.position += v * dt;

            let model = &materials[p.material];
            let mut trial = (Mat3::identity() + grad_v * dt) * p.deformation;
            if model.elasticity == ElasticityKind::FixedCorotated && trial.determinant() <= 0.0 {
                trial = model.admissible(&trial, index)?;
            }
            let mapped = return_map(&trial, model).map_err(|e| with_index(e, index))?;
            p.deformation = mapped.elastic;
            p.plastic_strain += mapped.plastic_increment;
            Ok(())
        })
        .collect();
    results.into_iter().collect()
}

/// Complete simulation state: particles, materials, grid and boundaries.
#[derive(Debug, Clone)]
pub struct MpmState {
    pub particles: Vec<MpmParticle>,
    pub materials: Vec<ConstitutiveModel>,
    pub grid: MpmGrid,
    pub colliders: Vec<Collider>,
    /// Number of outer node layers acting as frictionless walls; 0 disables.
    pub wall_layers: usize,
    pub transfer: Transfer,
    /// CFL number in `dt ≤ cfl · h / (c + max |v|)`.
    pub cfl: f64,
    pub time: f64,
    mass_epsilon: f64,
}

impl MpmState {
    pub fn new(particles: Vec<MpmParticle>, materials: Vec<ConstitutiveModel>, grid: MpmGrid) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::Empty("no particles".into()));
        }
        for m in &materials {
            m.validate()?;
        }
        for (i, p) in particles.iter().enumerate() {
            if !(p.mass > 0.0 && p.rest_volume > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "particle {i}: mass and rest volume must be positive"
                )));
            }
            if p.material >= materials.len() {
                return Err(Error::InvalidArgument(format!(
                    "particle {i}: unknown material {}",
                    p.material
                )));
            }
            if p.deformation.determinant() <= 0.0 {
                return Err(Error::InvertedDeformation {
                    index: i,
                    det: p.deformation.determinant(),
                });
            }
        }
        let mut masses: Vec<f64> = particles.iter().map(|p| p.mass).collect();
        masses.sort_by(f64::total_cmp);
        let median = masses[masses.len() / 2];
        Ok(Self {
            particles,
            materials,
            grid,
            colliders: Vec::new(),
            wall_layers: 3,
            transfer: Transfer::Apic,
            cfl: 0.3,
            time: 0.0,
            mass_epsilon: 1e-12 * median,
        })
    }

    pub fn transfer_options(&self) -> TransferOptions {
        TransferOptions {
            transfer: self.transfer,
            mass_epsilon: self.mass_epsilon,
        }
    }

    pub fn max_speed(&self) -> f64 {
        self.particles.iter().map(|p| p.velocity.norm()).fold(0.0, f64::max)
    }

    /// Largest stable step under the CFL condition.
    pub fn max_stable_dt(&self) -> f64 {
        let c = self.materials.iter().map(|m| m.wave_speed()).fold(0.0, f64::max);
        self.cfl * self.grid.spacing / (c + self.max_speed())
    }

    /// Splits `dt` into equal substeps that satisfy the CFL bound.
    pub fn plan_substeps(&self, dt: f64) -> (usize, f64) {
        let limit = self.max_stable_dt();
        let n = if dt <= limit { 1 } else { (dt / limit).ceil() as usize };
        (n, dt / n as f64)
    }

    /// One `p2g → grid_boundary → g2p` cycle of size `h`, with no CFL check.
    pub fn substep(&mut self, h: f64, loads: &[ExternalLoad]) -> Result<()> {
        for load in loads.iter().filter(|l| l.kind == LoadKind::VelocityImpulse) {
            if load.start >= self.time && load.start < self.time + h {
                let dv = load.vector();
                for p in self.particles.iter_mut().filter(|p| load.applies_to(&p.position)) {
                    p.velocity += dv;
                }
            }
        }
        let options = self.transfer_options();
        p2g(&self.particles, &self.materials, &mut self.grid, h, loads, self.time, &options)?;
        grid_boundary(&mut self.grid, &self.colliders, self.wall_layers);
        g2p(&mut self.particles, &self.materials, &self.grid, h, &options)?;
        self.time += h;
        Ok(())
    }

    /// Advances by `dt`, substepping when `dt` exceeds the CFL bound.
    /// Returns the number of substeps taken.
    pub fn step(&mut self, dt: f64, loads: &[ExternalLoad]) -> Result<usize> {
        let (n, h) = self.plan_substeps(dt);
        if n > 1 {
            warn!("dt = {dt:e} exceeds the CFL bound; taking {n} substeps of {h:e}");
        }
        for _ in 0..n {
            self.substep(h, loads)?;
        }
        Ok(n)
    }

    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.mass).sum()
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.particles.iter().map(|p| p.velocity * p.mass).sum()
    }
}
