use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("inconsistent dataset masks: {0}")]
    MaskInconsistent(String),

    #[error("class index {index} out of range for {classes} classes")]
    InvalidClass { index: usize, classes: usize },

    #[error("predict_mode is not defined for family {0}")]
    NotPredictive(&'static str),

    #[error("requested {n} observations but capacity is {max}")]
    TooManyObservations { n: usize, max: usize },

    #[error("cholesky factorization failed: {0}")]
    Cholesky(String),

    #[error("csv {path}: {reason}")]
    Csv { path: PathBuf, reason: String },

    #[error("non-finite value in {what}{}", iter.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    NonFinite { what: String, iter: Option<usize> },

    #[error("batch carries no generating parameters; forward KL needs data sampled from the assumed model")]
    MissingThetas,

    #[error("encoder input has zero active tokens")]
    ZeroActiveTokens,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{m} samples exceed the exact-assignment cap of {cap}; subsample first")]
    SampleCap { m: usize, cap: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config {path}: {msg}")]
    Config { path: String, msg: String },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { path: path.into(), msg: msg.into() }
    }

    /// Whether the error signals a diverged run rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::NonFinite { iter: Some(_), .. })
    }
}
