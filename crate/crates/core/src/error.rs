//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid label {label} at {file}:{line}: labels must be 0 or 1")]
    InvalidLabel {
        file: String,
        line: usize,
        label: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("unknown worker id {0:?}")]
    UnknownWorker(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("insufficient {class} population: need {needed}, have {available}")]
    InsufficientClass {
        class: String,
        needed: usize,
        available: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("zero variance in {0}")]
    ZeroVariance(String),

    #[error("both classes must be present: {0}")]
    SingleClass(String),

    #[error("agreement is undefined: {0}")]
    UndefinedAgreement(String),

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
