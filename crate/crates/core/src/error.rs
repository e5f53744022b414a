use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("dataset has no labels")]
    MissingLabels,

    #[error("label {label} is short: {needed} points needed, pool holds {available}")]
    Allocation {
        label: usize,
        needed: usize,
        available: usize,
    },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("aggregation failure: {0}")]
    Aggregation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn ensure_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
