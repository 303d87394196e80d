use std::io;

use thiserror::Error;

/// Errors raised by the guidance library.
#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("pursuer {index} coincides with the target (range {range:e})")]
    CoincidentTarget { index: usize, range: f64 },

    #[error("weighting factor kappa = {0} is outside (0, 1)")]
    InvalidKappa(f64),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("integrator step size underflow at t = {t} (h = {h:e})")]
    StepFailure { t: f64, h: f64 },

    #[error("no positive scale satisfies the free-time condition (A = {a}, B = {b})")]
    NoPositiveRoot { a: f64, b: f64 },

    #[error("bad network architecture: {0}")]
    BadArchitecture(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = GuidanceError> = std::result::Result<T, E>;
