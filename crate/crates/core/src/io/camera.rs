use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::raster::{read_pfm, read_png, write_pfm, write_png};
use crate::error::{Error, Result};
use crate::gaussians::Camera;
use crate::math::{quat_to_rotation, rotation_to_quat, Vec3};
use crate::optim::SupervisionView;

/// On-disk camera. `rotation` is the camera-to-world quaternion `[w, x, y, z]`
/// whose columns (as a matrix) are the camera right, down and forward axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub azimuth: Option<f64>,
}

impl From<&Camera> for CameraFile {
    fn from(c: &Camera) -> Self {
        Self {
            position: [c.position.x, c.position.y, c.position.z],
            rotation: rotation_to_quat(&c.rotation),
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            azimuth: Some(c.azimuth),
        }
    }
}

impl CameraFile {
    pub fn to_camera(&self) -> Result<Camera> {
        if self.rotation.iter().all(|v| *v == 0.0) || self.rotation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("rotation quaternion must be finite and non-zero".into()));
        }
        let mut cam = Camera::new(
            Vec3::from(self.position),
            quat_to_rotation(self.rotation),
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
        )?;
        cam.azimuth = self.azimuth.unwrap_or(0.0);
        Ok(cam)
    }
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    let file: CameraFile = serde_json::from_reader(super::open(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    file.to_camera().map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_camera(camera: &Camera, path: &Path) -> Result<()> {
    let mut w = super::create(path)?;
    serde_json::to_writer_pretty(&mut w, &CameraFile::from(camera))?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

/// Loads `view_{a}/{camera.json, image.png, depth.pfm}` for every `view_*`
/// directory under `dir`, ordered by `a`. A missing depth map is tolerated
/// and logged; view 0 is the input view.
pub fn read_views(dir: &Path) -> Result<Vec<SupervisionView>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut indexed = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(a) = name.strip_prefix("view_").and_then(|s| s.parse::<usize>().ok()) {
            indexed.push((a, entry.path()));
        }
    }
    indexed.sort();
    if indexed.is_empty() {
        return Err(Error::Empty(format!("{}: no view_* directories", dir.display())));
    }
    let mut views = Vec::with_capacity(indexed.len());
    for (a, path) in indexed {
        let camera = read_camera(&path.join("camera.json"))?;
        let image = read_png(&path.join("image.png"))?;
        if image.width != camera.width || image.height != camera.height {
            return Err(Error::format(
                path.join("image.png"),
                format!("image is {}x{}, camera expects {}x{}", image.width, image.height, camera.width, camera.height),
            ));
        }
        let depth_path = path.join("depth.pfm");
        let depth = if depth_path.exists() {
            let d = read_pfm(&depth_path)?;
            if d.width != camera.width || d.height != camera.height || d.channels != 1 {
                return Err(Error::format(depth_path, "depth map shape does not match the camera"));
            }
            Some(d)
        } else {
            warn!("{}: no depth map; view {a} gets no hard-depth supervision", path.display());
            None
        };
        views.push(SupervisionView {
            camera,
            image,
            depth,
            is_input_view: a == 0,
        });
    }
    Ok(views)
}

pub fn write_views(views: &[SupervisionView], dir: &Path) -> Result<()> {
    for (a, v) in views.iter().enumerate() {
        let sub = dir.join(format!("view_{a}"));
        write_camera(&v.camera, &sub.join("camera.json"))?;
        write_png(&v.image, &sub.join("image.png"))?;
        if let Some(d) = &v.depth {
            write_pfm(d, &sub.join("depth.pfm"))?;
        }
    }
    Ok(())
}
