use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("Josephson inductance diverges at flux {flux} Phi0 (half-integer flux quantum)")]
    Divergence { flux: f64 },

    #[error("flux {flux} Phi0 outside the operating range |flux| <= {clamp} Phi0")]
    OperatingRange { flux: f64, clamp: f64 },

    #[error("probe frequency sits on the resonator pole at flux {flux} Phi0")]
    Pole { flux: f64 },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("settling model error: {0}")]
    Model(String),

    #[error("demodulation failed: {0}")]
    Demodulation(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("reflection model invalid: {0}")]
    ModelInvalid(String),

    #[error("phase {phase} deg is outside the monotone calibration branch [{low}, {high}] deg")]
    OutOfBranch { phase: f64, low: f64, high: f64 },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field,
            reason: reason.into(),
        }
    }
}
