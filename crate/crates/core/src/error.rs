use thiserror::Error;

/// Errors raised by the numerical routines and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A limit or extrapolation did not settle. The last two estimates are
    /// kept as `(re, im)` pairs so callers can judge how far off they were.
    #[error("convergence failure: {message} (last estimates {last:?}, {previous:?})")]
    ConvergenceFailure {
        message: String,
        last: (f64, f64),
        previous: (f64, f64),
    },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("config validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn no_convergence(msg: impl Into<String>, last: (f64, f64), previous: (f64, f64)) -> Self {
        Error::ConvergenceFailure {
            message: msg.into(),
            last,
            previous,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
