//! File formats. Byte layouts are documented in `FORMATS.md` at the
//! repository root.

mod camera;
mod particles;
mod ply;
mod raster;
mod tensor;

pub use camera::{read_camera, read_views, write_camera, write_views, CameraFile};
pub use particles::{read_particles, write_particles, ParticleDump, PARTICLE_MAGIC, PARTICLE_RECORD_BYTES};
pub use ply::{load_splats, read_splats, save_splats, write_splats, SH_C0};
pub use raster::{read_pfm, read_png, write_frame, write_pfm, write_png, FramePaths};
pub use tensor::{read_tensor, write_tensor, Tensor, DTYPE_F32};

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}
