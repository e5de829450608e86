use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point is behind the camera (Z = {0})")]
    BehindCamera(f64),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("insufficient features: {found} correspondences survived, need at least {needed}")]
    InsufficientFeatures { found: usize, needed: usize },

    #[error("degenerate configuration (condition estimate {condition:.3e})")]
    Degenerate { condition: f64 },

    #[error("no RANSAC hypothesis reached the minimal consensus")]
    NoConsensus,

    #[error("no motion with more than {n_min} inliers (best had {best})")]
    NoMotion { n_min: usize, best: usize },

    #[error("no pixels are valid in both the estimate and the ground truth")]
    EmptyOverlap,

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("malformed manifest {path}: line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
