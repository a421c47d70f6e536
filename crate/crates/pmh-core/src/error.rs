//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors produced by configuration validation, the nonlinear solver and
/// internal consistency checks.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied configuration (ranges, grids, resolutions, files).
    #[error("configuration: {0}")]
    Config(String),

    /// The implicit step did not reach the residual tolerance.
    #[error(
        "Newton iteration stalled: residual {residual:.3e} after {iterations} iterations (dt = {dt:.3e})"
    )]
    NonConvergence {
        /// Final L1 residual of the nonlinear system.
        residual: f64,
        /// Newton iterations spent before giving up.
        iterations: usize,
        /// Time step at which the failure occurred.
        dt: f64,
    },

    /// A numerical routine failed outside the solver (bracketing, quadrature,
    /// too many failed ensemble members).
    #[error("numerics: {0}")]
    Numerics(String),

    /// An invariant the library guarantees was violated; indicates a bug.
    #[error("internal invariant violated: {0}")]
    Internal(String),

    /// Underlying I/O failure while reading or writing artifacts.
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for a configuration error.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Shorthand for a numerics error.
    pub fn numerics(msg: impl Into<String>) -> Self {
        Error::Numerics(msg.into())
    }

    /// Shorthand for an internal invariant violation.
    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}
