use thiserror::Error;

/// Crate-wide error type. Operations report the offending quantity in the
/// message so CLI users can act on it.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("non-finite gradient at channel index {index}")]
    NonFiniteGradient { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
