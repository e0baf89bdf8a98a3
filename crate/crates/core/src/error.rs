use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter block violates one of its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Cholesky factorisation hit a negative (or inconsistent zero) pivot.
    #[error("matrix is not positive semi-definite: leading minor of order {minor} fails (pivot {pivot:e})")]
    Factorization { minor: usize, pivot: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("markov chain error: {0}")]
    Markov(String),

    #[error("episode lifecycle error: {0}")]
    Lifecycle(String),

    #[error("hmm error: {0}")]
    Hmm(String),

    /// Non-finite loss or gradient during an update.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
