use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

/// Pinhole camera. `rotation` maps camera axes to world axes (its columns are
/// the camera's right, down and forward directions), so a world point `x`
/// has camera coordinates `rotationᵀ (x − position)`. Pixel centers sit at
/// half-integer coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub rotation: Mat3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Orbit azimuth in radians; informational for supervision views.
    #[serde(default)]
    pub azimuth: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        position: Vec3,
        rotation: Mat3,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            position,
            rotation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            azimuth: 0.0,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target` with the image `y` axis pointing
    /// away from `up`. Principal point at the image center.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye coincides with target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("up vector parallel to view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Mat3::from_columns(&[right, down, forward]);
        Self::new(
            eye,
            rotation,
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
        )
    }

    /// Camera on a sphere around `target` (world `y` up). Azimuth 0 sits on the
    /// `+z` side; positive elevation raises the camera.
    pub fn orbit(
        target: Vec3,
        radius: f64,
        azimuth: f64,
        elevation: f64,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let dir = Vec3::new(
            azimuth.sin() * elevation.cos(),
            elevation.sin(),
            azimuth.cos() * elevation.cos(),
        );
        let mut cam = Self::look_at(target + dir * radius, target, Vec3::y(), focal, width, height)?;
        cam.azimuth = azimuth;
        Ok(cam)
    }

    /// The four supervision views at azimuths `π a / 2`, `a = 0..3`.
    pub fn supervision_rig(
        target: Vec3,
        radius: f64,
        elevation: f64,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<[Camera; 4]> {
        let make = |a: usize| {
            Self::orbit(
                target,
                radius,
                std::f64::consts::FRAC_PI_2 * a as f64,
                elevation,
                focal,
                width,
                height,
            )
        };
        Ok([make(0)?, make(1)?, make(2)?, make(3)?])
    }

    pub fn validate(&self) -> Result<()> {
        let ortho = (self.rotation.transpose() * self.rotation - Mat3::identity()).amax();
        if !(ortho < 1e-10) {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal (deviation {ortho:e})"
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        if !(self.cx.is_finite() && self.cy.is_finite() && self.position.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidCamera("non-finite intrinsics or position".into()));
        }
        Ok(())
    }

    /// World-to-camera rotation `W = rotationᵀ`.
    #[inline]
    pub fn world_to_camera_rotation(&self) -> Mat3 {
        self.rotation.transpose()
    }

    #[inline]
    pub fn to_camera(&self, x: &Vec3) -> Vec3 {
        self.rotation.tr_mul(&(x - self.position))
    }

    pub fn pixel_center(x: usize, y: usize) -> (f64, f64) {
        (x as f64 + 0.5, y as f64 + 0.5)
    }
}
