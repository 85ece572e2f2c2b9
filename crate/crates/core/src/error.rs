use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent caller input (shapes, ranges, indices).
    #[error("invalid input: {0}")]
    Input(String),

    /// Cholesky factorization failed for every jitter on the ladder.
    #[error("factorization failed after jitter ladder {ladder:?}")]
    Factorization { ladder: Vec<f64> },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// The passivity constraint cannot be met in the requested mode.
    #[error("infeasible passivity constraint: {0}")]
    Infeasible(String),

    /// The dense oracle refused a problem beyond its size cap.
    #[error("refused: {0}")]
    Refused(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
