use thiserror::Error;

/// Errors raised by kernels, geometry, problem construction and the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point is not in the strict interior: coordinate {index} = {value}")]
    NotInterior { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("constraint matrix is rank deficient (rank {rank} < {rows} rows)")]
    RankDeficient { rank: usize, rows: usize },

    #[error("metric system A H^-1 A^T is numerically singular")]
    SingularMetricSystem,

    #[error("Armijo backtracking exhausted after {0} shrinks")]
    ArmijoExhausted(usize),

    #[error("starting point is infeasible: {0}")]
    InfeasibleStart(String),

    #[error("operation requires block-simplex constraints")]
    UnsupportedGeometry,

    #[error("instance does not match the structure of the special case: {0}")]
    StructuralMismatch(String),

    #[error("destination {destination} unreachable from origin {origin}")]
    Unreachable { origin: usize, destination: usize },

    #[error("instance generation failed: {0}")]
    GenerationFailed(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("known optimum is not available for this problem")]
    KnownOptimumUnavailable,

    #[error("unsupported plot kind: {0}")]
    UnsupportedKind(String),

    #[error("empty trace")]
    EmptyTrace,

    #[error("i/o error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
