use thiserror::Error;

/// Errors raised by the reliability pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Cholesky factorization failed at every jitter level that was tried.
    #[error("kernel matrix not positive definite after jitter levels {jitters:?}")]
    Factorization { jitters: Vec<f64> },

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("degenerate candidate pool: {0}")]
    DegeneratePool(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
