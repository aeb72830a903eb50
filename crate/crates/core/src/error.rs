use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has near-zero norm ({norm:e})")]
    ZeroRow { row: usize, norm: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("row {row} of {what} is not unit norm (|x| = {norm})")]
    NormViolation { what: &'static str, row: usize, norm: f64 },

    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing field: {0}")]
    MissingField(&'static str),

    #[error("schema version mismatch: {0}")]
    SchemaVersionMismatch(String),

    #[error("gallery is empty")]
    EmptyGallery,

    #[error("class {class} has {available} samples, {required} required")]
    InsufficientSamples { class: usize, available: usize, required: usize },

    #[error("class {0} has no support embeddings")]
    MissingClassSupport(usize),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("record {0} has no outcome label")]
    MissingOutcome(String),

    #[error("non-finite loss at step {step} (batch {batch})")]
    NonFiniteLoss { step: usize, batch: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Input-validation failures, as opposed to runtime failures.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::NonFiniteLoss { .. } | Error::Csv(_) | Error::NonFinite(_)
        )
    }
}
