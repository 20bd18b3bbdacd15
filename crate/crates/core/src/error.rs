use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm embedding")]
    ZeroNorm,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("metric requires both classes (n_real = {n_real}, n_fake = {n_fake})")]
    SingleClass { n_real: usize, n_fake: usize },

    #[error("threshold epsilon is not set; run calibration first")]
    EpsilonUnset,

    #[error("{0}")]
    Manifest(String),

    #[error("config: {0}")]
    Config(String),

    #[error("model: {0}")]
    Model(String),

    #[error("failed to decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("image {width}x{height} is too small for a {crop}x{crop} crop")]
    ImageTooSmall { width: u32, height: u32, crop: u32 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (config, manifest, flags)
    /// rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidShape(_)
                | Error::InvalidParameter(_)
                | Error::Manifest(_)
                | Error::Config(_)
                | Error::EpsilonUnset
        )
    }
}
