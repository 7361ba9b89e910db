use thiserror::Error;

/// Errors raised anywhere in the tomography toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(
        "matrix is not Hermitian (max |A - A^dagger| = {deviation:e}, tolerance {tolerance:e})"
    )]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("dimension mismatch: {0}x{0} vs {1}x{1}")]
    DimensionMismatch(usize, usize),

    #[error("invalid dimension {0}")]
    InvalidDimension(usize),

    #[error("trace is not 1 (got {0})")]
    InvalidTrace(f64),

    #[error("matrix is not unitary (max |V^dagger V - 1| = {0:e})")]
    NotUnitary(f64),

    #[error("invalid measurement record: {0}")]
    InvalidRecord(String),

    #[error("data is not identifiable: {0}")]
    NonIdentifiable(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("maximum likelihood estimation failed at iteration {iteration} (N_emit = {n_emit}): {source}")]
    Estimation {
        iteration: usize,
        n_emit: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("curve error: {0}")]
    Curve(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
