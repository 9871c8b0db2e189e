use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the alignment and reconstruction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("{}: expected {expected_width}x{expected_height}, found {width}x{height}", path.display())]
    DimensionMismatch {
        path: PathBuf,
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },
    #[error("malformed PGM {}: {reason}", path.display())]
    Pgm { path: PathBuf, reason: String },
    #[error("corrupt volume: {0}")]
    CorruptVolume(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("reference point unavailable: {0}")]
    NoReference(String),
    #[error("shifts leave no pixel valid in every frame")]
    EmptyCrop,
    #[error("operation cancelled")]
    Cancelled,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
