use thiserror::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by ingestion, fitting, and selection.
#[derive(Debug, Error)]
pub enum Error {
    /// File system failure while reading or writing data.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A cell could not be parsed; coordinates are 1-based file positions.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    /// Input violates a documented precondition or invariant.
    #[error("invalid input: {0}")]
    Validation(String),

    /// A numeric routine failed (non-convergence, singular or indefinite system).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The constraint system of a quadratic program admits no feasible point.
    #[error("infeasible constraints: {0}")]
    Infeasible(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
