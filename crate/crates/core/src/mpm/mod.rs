//! Explicit Material Point Method.
//!
//! One step is `p2g → grid_boundary → g2p`: particle mass and momentum are
//! scattered to the grid with quadratic B-spline weights, the grid momentum is
//! advanced by forward Euler under internal (Kirchhoff) and external forces,
//! colliders are applied, and the grid velocity field is gathered back to
//! update particle velocity, position and deformation gradient.

mod boundary;
mod bspline;
mod constitutive;
mod grid;
mod loads;
mod particle;
mod plasticity;
mod solver;

pub use boundary::{grid_boundary, Collider, ColliderMode, ColliderShape};
pub use bspline::{bspline_weights, Stencil};
pub use constitutive::{ConstitutiveModel, ElasticityKind, MaterialPreset, PlasticityKind};
pub use grid::{GridGeometry, MpmGrid};
pub use loads::{ExternalLoad, LoadKind, Region};
pub use particle::MpmParticle;
pub use plasticity::{return_map, yield_function, ReturnMapResult};
pub use solver::{g2p, p2g, MpmState, Transfer, TransferOptions};
