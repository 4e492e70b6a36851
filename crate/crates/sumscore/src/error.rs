//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A malformed line in a line-oriented input file.
    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A record points at something that does not exist.
    #[error("referential integrity: {0}")]
    Integrity(String),

    /// Caller violated an operation's precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A numeric routine produced or met a value it cannot work with.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An iterative solver ran out of iterations.
    #[error("{what} did not converge within {iterations} iterations")]
    NotConverged { what: String, iterations: usize },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
