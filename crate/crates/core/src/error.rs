use thiserror::Error;

/// Errors raised by the causality toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(
        "matrix is not positive definite (pivot {pivot} = {value:e} at or below floor {floor:e})"
    )]
    NotPositiveDefinite {
        pivot: usize,
        value: f64,
        floor: f64,
    },

    #[error("numerical breakdown: residual diagonal {value:e} at index {index} (input not PSD)")]
    NumericalBreakdown { index: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("series too short: {length} time points cannot support {lags} lags")]
    InsufficientLength { length: usize, lags: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown block `{0}`")]
    UnknownBlock(String),
}

pub type Result<T> = std::result::Result<T, Error>;
