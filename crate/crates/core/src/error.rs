//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the identification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or signal dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// An index or window violated a bound; the message names the bound.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// The stacked observability matrix is rank deficient.
    #[error("system unobservable: rank {rank} < {needed} states")]
    Unobservable { rank: usize, needed: usize },

    /// An iterative solver did not reach its tolerance.
    #[error("no convergence after {iters} iterations (residual {residual:.3e})")]
    NoConvergence { iters: usize, residual: f64 },

    /// A simulation or training run produced a non-finite state.
    #[error("diverged at step {step}")]
    Diverged { step: usize },

    /// A non-finite value where a finite one is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Not enough samples for the requested operation.
    #[error("insufficient data: need {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// Invalid argument or configuration value.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Malformed file contents.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
