use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FcdError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid coordinate subset: {0}")]
    InvalidSubset(String),

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("curvature model is not diagonal")]
    NotDiagonal,

    #[error("the CG inner solver requires a zero regularizer")]
    NonSmoothRegularizer,

    #[error("subset gradient is zero")]
    ZeroGradient,

    #[error("inner solver failed to certify a direction after {iterations} sweeps")]
    CertificateNotMet { iterations: usize },

    #[error("line search exhausted {trials} backtracks without sufficient decrease")]
    LineSearchExhausted { trials: usize },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("level set is unbounded or unknown: {0}")]
    UnboundedLevelSet(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for FcdError {
    fn from(e: std::io::Error) -> Self {
        FcdError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FcdError>;
