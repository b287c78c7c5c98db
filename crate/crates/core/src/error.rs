//! Crate-wide error type.

use std::fmt;

/// Errors surfaced by kernel construction, factorization, transforms, IO and training.
#[derive(Debug)]
pub enum Error {
    /// A symmetric matrix failed Cholesky factorization even after jitter escalation.
    NotPositiveDefinite { dim: usize, pivot: f64, jitter: f64 },
    DimensionMismatch { expected: usize, got: usize, context: &'static str },
    NonPowerOfTwoLength(usize),
    /// Requested more wavelet levels than the signal supports.
    TooManyLevels { length: usize, filter_len: usize, requested: usize },
    InconsistentPyramid(String),
    ShapeMismatch(String),
    InvalidNeighborCount { k: usize, dim: usize },
    /// Backward pass invoked without a cached forward evaluation.
    MissingForwardCache,
    NonFiniteGradient { group: &'static str },
    /// Time integration produced a non-finite field.
    UnstableStep { step: usize },
    /// Exact translation requested a shift that does not land on grid points.
    NonIntegerShift { shift_cells: f64 },
    CorruptHeader(String),
    UnsupportedVersion(u32),
    InstanceTooLarge { size: usize, limit: usize },
    InvalidConfig(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NotPositiveDefinite { dim, pivot, jitter } => write!(
                f,
                "matrix of dim {dim} not positive definite (pivot {pivot:.3e} at jitter {jitter:.3e})"
            ),
            Error::DimensionMismatch { expected, got, context } => {
                write!(f, "dimension mismatch in {context}: expected {expected}, got {got}")
            }
            Error::NonPowerOfTwoLength(n) => write!(f, "length {n} is not a power of two"),
            Error::TooManyLevels { length, filter_len, requested } => write!(
                f,
                "cannot run {requested} wavelet levels on length {length} with filter length {filter_len}"
            ),
            Error::InconsistentPyramid(msg) => write!(f, "inconsistent wavelet pyramid: {msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InvalidNeighborCount { k, dim } => {
                write!(f, "neighbor count {k} invalid for {dim} grid points")
            }
            Error::MissingForwardCache => write!(f, "backward called without forward cache"),
            Error::NonFiniteGradient { group } => {
                write!(f, "non-finite gradient in parameter group {group}")
            }
            Error::UnstableStep { step } => {
                write!(f, "time integration became non-finite at step {step}")
            }
            Error::NonIntegerShift { shift_cells } => {
                write!(f, "shift of {shift_cells} grid cells is not an integer")
            }
            Error::CorruptHeader(msg) => write!(f, "corrupt file header: {msg}"),
            Error::UnsupportedVersion(v) => write!(f, "unsupported format version {v}"),
            Error::InstanceTooLarge { size, limit } => {
                write!(f, "instance size {size} exceeds dense-reference limit {limit}")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
