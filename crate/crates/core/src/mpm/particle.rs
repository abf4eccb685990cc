use crate::math::{Mat3, Vec3};

/// Lagrangian material sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpmParticle {
    pub position: Vec3,
    pub velocity: Vec3,
    pub mass: f64,
    pub rest_volume: f64,
    pub deformation: Mat3,
    /// APIC affine velocity matrix `C_p`; zero under PIC.
    pub affine: Mat3,
    /// `∇v_p` from the most recent grid-to-particle transfer.
    pub velocity_gradient: Mat3,
    /// Accumulated plastic strain.
    pub plastic_strain: f64,
    pub material: usize,
}

impl MpmParticle {
    pub fn at_rest(position: Vec3, mass: f64, rest_volume: f64, material: usize) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            mass,
            rest_volume,
            deformation: Mat3::identity(),
            affine: Mat3::zeros(),
            velocity_gradient: Mat3::zeros(),
            plastic_strain: 0.0,
            material,
        }
    }
}
