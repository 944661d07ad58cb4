use thiserror::Error;

/// Errors raised by the tensor, linear-algebra, and optimizer layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("mode {mode} out of range for order-{order} tensor")]
    InvalidMode { mode: usize, order: usize },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e} at index {index}")]
    NotPsd { index: usize, eigenvalue: f64 },

    #[error("negative power of a singular matrix: eigenvalue {eigenvalue:e} at index {index}")]
    Singular { index: usize, eigenvalue: f64 },

    #[error("eigensolver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("optimizer variant mismatch: {0}")]
    VariantMismatch(String),

    #[error("round {t} outside 1..={horizon}")]
    RoundOutOfRange { t: usize, horizon: usize },

    #[error(
        "offline solver stalled after {iterations} iterations with gradient norm {grad_norm:e}"
    )]
    SolverStalled { iterations: usize, grad_norm: f64 },

    #[error("comparator was solved on a different problem")]
    ProblemMismatch,

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
