//! Crate-wide error type.

use thiserror::Error;

/// Errors reported by the numerical lab.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input value violates a documented precondition.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A linear or nonlinear trajectory left the representable range.
    #[error("trajectory became unstable at time {time}: a state exceeded {threshold:e}")]
    Unstable { time: f64, threshold: f64 },

    /// An iterative solver failed to reach its tolerance.
    #[error("{solver} did not converge: {detail}")]
    NoConvergence { solver: &'static str, detail: String },

    /// The adaptive integrator could not take a step above the minimal size.
    #[error("step size underflow at time {time} (h = {step:e})")]
    StepUnderflow { time: f64, step: f64 },

    /// A logistic-regression trajectory left the range where the closed-form
    /// coefficients are valid.
    #[error("state left the tame regime: {detail}")]
    LeftTameRegime { detail: String },

    /// The requested limit object does not exist for this point of the phase plane.
    #[error("unsupported region: {0}")]
    UnsupportedRegion(String),

    /// Two inputs that must share a grid or dimension do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A Monte Carlo run would exceed its compute budget.
    #[error("compute budget exceeded: {0}")]
    Budget(String),

    /// Configuration could not be parsed or validated.
    #[error("configuration error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    /// Filesystem or serialization failure.
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
