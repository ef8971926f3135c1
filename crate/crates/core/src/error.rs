use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("homogeneous coordinates (0, 0) do not define a point")]
    DegeneratePoint,
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("degenerate map: both homogeneous components vanish at {0}")]
    DegenerateEvaluation(String),
    #[error("polynomial of degree zero has no roots")]
    DegreeZero,
    #[error("root solver did not converge (worst residual {worst_residual:e})")]
    NonConvergence { worst_residual: f64 },
    #[error("no valid root after {attempts} candidates")]
    ScreeningFailure { attempts: usize },
    #[error("lifted path passes within {radius:e} of the critical set at level {level}")]
    Collision { level: usize, radius: f64 },
    #[error("path continuation failed at parameter {t}: {reason}")]
    ContinuationFailure { t: f64, reason: String },
    #[error("tree with {vertices} vertices exceeds the memory budget of {budget}")]
    MemoryBudget { vertices: u128, budget: u64 },
    #[error("preimage collision at a critical value persisted after redraw")]
    PreimageCollision,
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
