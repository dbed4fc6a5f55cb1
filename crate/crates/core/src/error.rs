use thiserror::Error;

/// Errors raised by the weighted-ensemble engine and its numerical helpers.
///
/// State and bin indices carried in errors are 1-based, matching all
/// external I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid transition matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid observable: {0}")]
    InvalidObservable(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("bin {bin} has zero sampling mass")]
    EmptyBin { bin: usize },

    #[error("bin {bin} received no one-step samples; increase the sample budget")]
    UnvisitedBin { bin: usize },

    #[error("variance estimate v[{p}][{bin}] = {value:e} is negative beyond roundoff")]
    NegativeVariance { p: usize, bin: usize, value: f64 },

    #[error("particle {particle} has nonpositive mean children count {value}")]
    NonPositiveMeanChildren { particle: usize, value: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
