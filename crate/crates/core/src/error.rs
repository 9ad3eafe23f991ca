//! Error type shared by all modules.

use std::fmt;

/// Errors raised by operator construction, samplers and inference engines.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A dimension precondition was violated (e.g. `n <= k + 1`).
    InvalidDimension(String),
    /// Grid locations are not strictly increasing or otherwise unusable.
    InvalidGrid(String),
    /// A parameter fell outside its mathematical domain.
    Domain(String),
    /// Input data failed validation; the message lists offending indices.
    Validation(String),
    /// The banded Cholesky factorization broke down at the given pivot,
    /// even after one jitter retry.
    NumericalBreakdown { pivot: usize, detail: String },
    /// Too many bootstrap fits failed to converge during calibration.
    CalibrationFailed(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidDimension(msg) => write!(f, "invalid dimension: {msg}"),
            Error::InvalidGrid(msg) => write!(f, "invalid grid: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::NumericalBreakdown { pivot, detail } => {
                write!(f, "numerical breakdown at pivot {pivot}: {detail}")
            }
            Error::CalibrationFailed(msg) => write!(f, "calibration failed: {msg}"),
        }
    }
}

impl std::error::Error for Error {}
