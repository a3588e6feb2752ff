use thiserror::Error;

/// Errors raised by model construction, fusion and weight selection.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("invalid pmf: {0}")]
    InvalidPmf(String),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("singular or ill-conditioned covariance: {0}")]
    SingularCovariance(String),
    #[error("truncation too aggressive: tail mass {tail:e} beyond n_max = {n_max}")]
    TruncationTooAggressive { n_max: usize, tail: f64 },
    #[error("misaligned grids")]
    MisalignedGrids,
    #[error("incompatible cardinality supports")]
    IncompatibleSupports,
    #[error("incompatible existence beliefs")]
    IncompatibleExistence,
    #[error("incompatible localisation representations")]
    IncompatibleRepresentations,
    #[error("family mismatch: {0} vs {1}")]
    FamilyMismatch(&'static str, &'static str),
    #[error("bound undefined: {0}")]
    BoundUndefined(String),
    #[error("too many rejected Monte-Carlo samples: {rejected} of {drawn}")]
    TooManyRejections { rejected: usize, drawn: usize },
    #[error("Newton iterations did not converge after {iterations} steps (omega trace {omegas:?})")]
    NotConverged { iterations: usize, omegas: Vec<f64> },
}

pub type Result<T, E = FusionError> = std::result::Result<T, E>;
