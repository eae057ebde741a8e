use thiserror::Error;

/// Errors raised by the optimization library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The Gram matrix stayed non positive definite after the full jitter ladder.
    #[error("singular model: Cholesky failed with jitter {jitter:e}")]
    SingularModel { jitter: f64 },

    /// Every hyperparameter candidate had zero posterior density.
    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    #[error("unsupported dimension {dim} (maximum {max})")]
    UnsupportedDimension { dim: usize, max: usize },

    #[error("unknown objective '{0}'")]
    UnknownObjective(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
