use std::path::PathBuf;

use thiserror::Error;

/// Numerical failures inside the model's forward pass.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("cholesky factorization failed for a {dim}x{dim} correlation matrix")]
    CholeskyFailed { dim: usize },
    #[error("kernel self-similarity is not positive at row {row}")]
    NonPositiveSelfSimilarity { row: usize },
    #[error("attention row {row} has no visible keys")]
    EmptyAttentionRow { row: usize },
    #[error("{what} id {id} out of range (size {size})")]
    IdOutOfRange { what: &'static str, id: usize, size: usize },
    #[error("model dimension {dim} is not divisible by {heads} heads")]
    HeadsDoNotDivide { dim: usize, heads: usize },
    #[error("sequence is empty")]
    EmptySequence,
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("need at least {min} positions, got {got}")]
    TooFewPositions { min: usize, got: usize },
    #[error("non-finite {what}")]
    NonFinite { what: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("input contains no interactions")]
    EmptyInput,
    #[error("no user has at least {min_len} interactions")]
    NoSequences { min_len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("catalog too small: need {needed} items outside the history, only {available} available")]
    CatalogTooSmall { needed: usize, available: usize },
    #[error("unknown item id {0}")]
    UnknownItem(u64),
    #[error("unknown user id {0}")]
    UnknownUser(u64),
    #[error("incompatible format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
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

pub type Result<T, E = Error> = std::result::Result<T, E>;
