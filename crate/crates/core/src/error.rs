use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the testing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("tolerance bound error: {0}")]
    Bound(String),

    /// The variance estimate of the cross U-statistic vanished, so the
    /// studentized statistic is undefined.
    #[error("degenerate variance: the cross U-statistic has zero estimated variance")]
    DegenerateVariance,

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
