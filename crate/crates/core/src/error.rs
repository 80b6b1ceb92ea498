use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the lab.
#[derive(Debug, Error)]
pub enum CladError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("numeric fault in {location}: {detail}")]
    Numeric { location: String, detail: String },

    #[error("cosine similarity undefined for a zero-norm vector")]
    UndefinedSimilarity,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },

    #[error("record {id}: missing file {path}")]
    MissingFile { id: u64, path: PathBuf },

    #[error("record {id}: checksum mismatch for {path}")]
    ChecksumMismatch { id: u64, path: PathBuf },

    #[error("record {id}: validation failed: {reason}")]
    Validation { id: u64, reason: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("image codec error for {path}: {reason}")]
    Codec { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CladError {
    pub fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        CladError::Numeric {
            location: location.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CladError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, CladError::Numeric { .. })
    }
}

pub type Result<T> = std::result::Result<T, CladError>;
