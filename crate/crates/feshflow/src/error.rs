use thiserror::Error;

/// Errors raised by the numerical engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mode index {mode} out of range (grid has {modes} modes)")]
    ModeOutOfRange { mode: usize, modes: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("operator is not diagonal (largest off-diagonal entry {max_offdiag:e})")]
    NotDiagonal { max_offdiag: f64 },

    #[error("singular operator: smallest singular value {margin:e} below threshold {threshold:e}")]
    SingularOperator { margin: f64, threshold: f64 },

    #[error("operator not in the domain of the map: {0}")]
    NotInDomain(String),

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("support mismatch: {0}")]
    SupportMismatch(String),

    #[error("rank-deficient fit: {deficiency} undetermined degrees of freedom")]
    RankDeficientFit { deficiency: usize },

    #[error("fit residual {residual:e} exceeds limit {limit:e}")]
    FitResidualTooLarge { residual: f64, limit: f64 },

    #[error("fixed-point iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("unknown suite `{0}`")]
    UnknownSuite(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
