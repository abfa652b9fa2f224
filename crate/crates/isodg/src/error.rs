//! Error type shared by all modules.

use thiserror::Error;

/// Errors raised by the solver and analysis toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A point lies outside the reference interval.
    #[error("domain error: {0}")]
    Domain(String),
    /// An iteration failed to reach its tolerance within the cap.
    #[error("convergence failure: {0}")]
    ConvergenceFailure(String),
    /// A factorization or eigensolve failed.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// A requested feature lies outside the supported range.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// A geometric mapping is not invertible at a sampled point.
    #[error("non-invertible mapping: {0}")]
    NonInvertibleMapping(String),
    /// An inconsistent mesh or solver configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
    /// Time integration produced non-finite values.
    #[error("divergence at step {step}: non-finite state")]
    Divergence {
        /// Index of the offending step.
        step: usize,
    },
    /// An internal consistency check failed.
    #[error("internal error: {0}")]
    Internal(String),
    /// I/O failure while writing outputs.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias.
pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
