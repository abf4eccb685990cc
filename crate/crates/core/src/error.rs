use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel {index}: {reason}")]
    InvalidKernel { index: usize, reason: String },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("particle {index} at ({x:.6}, {y:.6}, {z:.6}) lies outside the grid transfer margin")]
    OutOfBounds { index: usize, x: f64, y: f64, z: f64 },

    #[error("particle {index}: deformation gradient is inverted (det = {det:e})")]
    InvertedDeformation { index: usize, det: f64 },

    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("invalid load: {0}")]
    InvalidLoad(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("scene '{scene}' has zero variance across models")]
    ZeroVariance { scene: String },

    #[error("optimization diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Kernel parameters as they were before the failing update.
        snapshot: Box<Vec<crate::gaussians::GaussianKernel>>,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] ::image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
