//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any stage of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("all rows deleted by missing-value handling")]
    AllRowsDeleted,

    #[error("class {label} too small to stratify ({count} samples, need at least {need})")]
    ClassTooSmall {
        label: String,
        count: usize,
        need: usize,
    },

    #[error("zero matrix has no effective rank")]
    ZeroMatrix,

    #[error("not enough eigenvectors: requested {requested}, available {available}")]
    NotEnoughEigenvectors { requested: usize, available: usize },

    #[error("eigensolver failed to converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("graph import: {0}")]
    GraphImport(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("pipeline stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
