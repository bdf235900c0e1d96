use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line} is not valid UTF-8 (only UTF-8 input is supported)")]
    Encoding { path: PathBuf, line: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unsupported language tag '{0}'")]
    UnsupportedLanguage(String),

    #[error("cannot parse rating payload ({reason}): {raw:?}")]
    RatingParse { reason: String, raw: String },

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero vector: {0}")]
    ZeroVector(String),

    #[error("rank-deficient design; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("duplicate key {0}")]
    DuplicateKey(String),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
