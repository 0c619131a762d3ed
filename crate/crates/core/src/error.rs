use thiserror::Error;

/// Errors raised by model evaluation, geometry, solving and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("mean outside image of the mean map: {0}")]
    MeanOutsideImage(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("degenerate estimator: assertions {i} and {j} coincide (distance {distance:e})")]
    Degenerate { i: usize, j: usize, distance: f64 },

    #[error("integration failed: achieved error {achieved:e} exceeds tolerance {tolerance:e}")]
    Integration { achieved: f64, tolerance: f64 },

    #[error("empty cell {index} (mass {mass:e})")]
    EmptyCell { index: usize, mass: f64 },

    #[error("inconsistent family `{name}`: {reason}")]
    InconsistentFamily { name: String, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
