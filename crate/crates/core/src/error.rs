use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum DipError {
    #[error("dimension `{0}` must be positive")]
    ZeroDimension(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unsupported activation `{0}` (expected sigmoid, tanh, softplus or linear)")]
    UnsupportedActivation(String),

    #[error("non-finite evaluation at x = {at}")]
    NonFiniteEvaluation { at: f64 },

    #[error("quadrature did not converge: {nodes} vs {doubled} nodes differ by {delta:e}")]
    QuadratureNotConverged {
        nodes: usize,
        doubled: usize,
        delta: f64,
    },

    #[error("degenerate operator: {0}")]
    DegenerateOperator(String),

    #[error("eigensolver failure on {dim}x{dim} matrix: {detail}")]
    Eigen { dim: usize, detail: String },

    #[error("insufficient data: {valid} usable samples, need at least {required}")]
    InsufficientData { valid: usize, required: usize },

    #[error("work budget exceeded: estimated {estimate:.3e} ops > budget {budget:.3e} ops")]
    BudgetExceeded { estimate: f64, budget: f64 },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DipError>;

impl DipError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        DipError::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
