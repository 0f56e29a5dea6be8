use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("nonpositive conductivity {0}")]
    NonpositiveConductivity(f64),

    #[error("unsupported dimension {0}, expected 2 or 3")]
    UnsupportedDimension(usize),

    #[error("tensor is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("tensor is not positive definite (eigenvalues in [{min:e}, {max:e}])")]
    NotPositiveDefinite { min: f64, max: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("normal is not a unit vector (|n| = {0})")]
    NonUnitNormal(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid fractions: {0}")]
    InvalidFractions(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("patch {index}: {reason}")]
    Patch { index: usize, reason: String },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("quadrature did not converge (estimated error {estimate:e} > tolerance {tolerance:e})")]
    Quadrature { estimate: f64, tolerance: f64 },

    #[error("rank-deficient applied-field set (rank {rank}, need {needed})")]
    RankDeficient { rank: usize, needed: usize },

    #[error("solver did not converge in {} iterations (last residual {:e})", .history.len(), .history.last().copied().unwrap_or(f64::NAN))]
    NotConverged { history: Vec<f64> },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
