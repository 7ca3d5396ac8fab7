//! Error type shared by all numerical routines in this crate.

use thiserror::Error;

/// Errors reported by grid construction, integration, and bound computation.
#[derive(Debug, Clone, Error)]
pub enum OdeSensError {
    /// A time grid violated its ordering or size requirements.
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    /// Operand shapes are inconsistent (vector/matrix dimensions, sample counts).
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    /// A model or right-hand side produced a non-finite value.
    #[error("non-finite value in {what} at t = {t}")]
    NonFinite { what: String, t: f64 },

    /// The adaptive integrator could not meet its tolerance with a representable step.
    #[error("step size underflow at t = {t}; the problem may be too stiff for this method")]
    StepSizeUnderflow { t: f64 },

    /// A query time fell outside the trajectory's span.
    #[error("time {t} outside trajectory span [{t0}, {tf}]")]
    OutOfRange { t: f64, t0: f64, tf: f64 },

    /// An input failed a validation precondition (symmetry, nonnegativity, ...).
    #[error("validation failed: {0}")]
    Validation(String),

    /// A weight matrix required a Cholesky factor but was not positive definite.
    #[error("matrix in {context} is not symmetric positive definite")]
    NotPositiveDefinite { context: String },

    /// An operation needs model data the supplied model does not provide.
    #[error("model capability missing: {0}")]
    MissingCapability(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, OdeSensError>;
