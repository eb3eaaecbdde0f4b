use thiserror::Error;

/// Errors raised by the lattice library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("insufficient budget: estimate {value} has standard error {stderr} above tolerance {tolerance}")]
    InsufficientBudget {
        value: f64,
        stderr: f64,
        tolerance: f64,
    },
    #[error("blow-up: {0}")]
    BlowUp(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
