use thiserror::Error;

use crate::sde::Measure;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("pathset measure mismatch: expected {expected}, got {got}")]
    MeasureMismatch { expected: Measure, got: Measure },

    #[error("degenerate market: {0}")]
    Degenerate(String),

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("bracket failure: {0}")]
    BracketFailure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
