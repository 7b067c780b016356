//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Tensor or layer dimensions do not compose.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A computation produced a non-finite value or diverged.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A file does not match the expected on-disk format.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for bad input/format, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
