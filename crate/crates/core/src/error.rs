use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("tiff: {0}")]
    Tiff(#[from] tiff::TiffError),

    #[error("{path}: insufficient bands ({bands}, need at least 3)")]
    InsufficientBands { path: PathBuf, bands: usize },

    #[error("{0}: not georeferenced (no affine transform)")]
    NotGeoreferenced(PathBuf),

    #[error("unsupported raster: {0}")]
    UnsupportedRaster(String),

    #[error("CRS mismatch: {left} vs {right}")]
    CrsMismatch { left: String, right: String },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label code {code} is not valid for {classes} classes")]
    LabelOutOfRange { code: u8, classes: usize },

    #[error("train patch at ({x}, {y}) size {size} intersects test quarter of fold {fold}")]
    TestLeakage {
        fold: usize,
        x: usize,
        y: usize,
        size: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unmapped parameters: {}", .0.join(", "))]
    UnmappedParameters(Vec<String>),

    #[error("missing artifact {path}: run `{command}` first")]
    MissingArtifact { path: PathBuf, command: &'static str },

    #[error("config fingerprint mismatch: artifact {artifact}, config {config} (use --force to override)")]
    FingerprintMismatch { artifact: String, config: String },

    #[error("no training data: {0}")]
    NoData(String),

    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
