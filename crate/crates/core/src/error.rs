use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range 0..={max}")]
    Range { index: usize, max: usize },

    #[error("{what}: value {value} outside the admissible domain")]
    Domain { what: &'static str, value: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("matrix is not positive definite ({context})")]
    Definiteness { context: String },

    #[error("singular reduction: corner entry {0} is not positive")]
    Singular(f64),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("split-consistency failure: max entrywise mismatch {0:e}")]
    SplitConsistency(f64),

    #[error("test function has nonzero coefficients beyond the truncation level {0}")]
    Truncation(usize),

    #[error("insufficient sample: {got} < {needed}")]
    InsufficientSample { got: usize, needed: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown suite `{0}`")]
    UnknownSuite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
