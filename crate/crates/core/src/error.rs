use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Kernel solve did not reach the requested tolerance.
    #[error("kernel solver did not converge: residual {residual:.3e} > tolerance {tolerance:.3e}")]
    Convergence { residual: f64, tolerance: f64 },

    /// A time step could not be completed (Picard iteration stalled or produced non-finite values).
    #[error("step failed at t = {t:.6}: {reason} (last residual {residual:.3e})")]
    StepFailure {
        t: f64,
        residual: f64,
        reason: String,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidArgument(_) | Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
