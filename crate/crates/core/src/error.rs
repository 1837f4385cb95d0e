use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the planning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Input that violates a documented precondition.
    #[error("rejected input: {0}")]
    Rejected(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("clock alignment failed for event {event}: {message}")]
    Alignment { event: String, message: String },

    /// Loss or gradient became non-finite.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("incompatible artifacts: {0}")]
    Incompatible(String),

    #[error("bad container: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn rejected(msg: impl Into<String>) -> Self {
        Error::Rejected(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
