use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported spatial dimension {0} (expected 2 or 3)")]
    UnsupportedDimension(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("number of multi-indices overflows for P = {vars}, n = {degree}")]
    IndexOverflow { vars: usize, degree: usize },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("time {0} is not on the step grid")]
    OffGridTime(f64),

    #[error("requested time {0} has no stored snapshot")]
    MissingSnapshot(f64),

    #[error("linearized step is rank deficient (|R_kk| = {0:e}); add regularization")]
    IllPosedStep(f64),

    #[error("discrepancy principle needs a positive noise level")]
    ZeroNoise,

    #[error("diffusivity is not positive at {point:?} (value {value})")]
    NonPositiveDiffusivity { point: Vec<f64>, value: f64 },

    #[error("measurement coordinates do not match the surrogate: {0}")]
    CoordinateMismatch(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported file version {found} (this build reads {supported})")]
    Version { found: u32, supported: u32 },

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("expression: {0}")]
    Expression(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
