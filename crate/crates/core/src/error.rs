use num_rational::BigRational;
use thiserror::Error;

/// Errors raised by the weight, permutation, wild-set and spectral routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("capacity exceeded: {0}")]
    CapacityExceeded(String),

    #[error("scan cap {cap} exceeded while {context}")]
    ScanCapExceeded { cap: u64, context: String },

    #[error("invalid weight: {0}")]
    InvalidWeight(String),

    #[error("invalid block boundaries: {0}")]
    InvalidBoundaries(String),

    #[error("a block straddles the truncation dimension {dim}")]
    BlockOverflow { dim: usize },

    #[error("matrix is not positive definite: pivot {pivot:e} at row {row}")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("jacobi iteration did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    ConvergenceFailure { sweeps: usize, off_norm: f64 },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("no divergence witness below cap {cap}; largest ratio seen {largest_ratio}")]
    WitnessNotFoundBelowCap { cap: u64, largest_ratio: BigRational },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::CapacityExceeded(_) => "CapacityExceeded",
            Error::ScanCapExceeded { .. } => "ScanCapExceeded",
            Error::InvalidWeight(_) => "InvalidWeight",
            Error::InvalidBoundaries(_) => "InvalidBoundaries",
            Error::BlockOverflow { .. } => "BlockOverflow",
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::ConvergenceFailure { .. } => "ConvergenceFailure",
            Error::ModelMismatch(_) => "ModelMismatch",
            Error::IndexOutOfRange(_) => "IndexOutOfRange",
            Error::WitnessNotFoundBelowCap { .. } => "WitnessNotFoundBelowCap",
            Error::Precondition(_) => "Precondition",
            Error::Parse(_) => "Parse",
        }
    }

    pub(crate) fn scan_cap(cap: u64, context: impl Into<String>) -> Self {
        Error::ScanCapExceeded { cap, context: context.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
