//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: missing mandatory column `{0}`")]
    MissingColumn(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training error: {0}")]
    Train(String),

    #[error("model file version mismatch: {0}")]
    ModelVersion(String),

    #[error("model file digest mismatch: {0}")]
    ModelDigest(String),

    #[error("model file truncated: {0}")]
    ModelTruncated(String),

    #[error("http error: {0}")]
    Http(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
