use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("level grid needs at least 2 grayvalues, got {0}")]
    TooFewLevels(usize),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),

    #[error("lifted field violates constraint: {0}")]
    InvalidField(String),

    #[error("level grids differ ({0} vs {1} levels)")]
    GridMismatch(usize, usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported transport cost: {0}")]
    UnsupportedCost(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("linear solve did not converge (residual {residual:e})")]
    NotConverged { residual: f64 },

    #[error("iteration diverged at iteration {iteration}: energy {energy:e} vs initial {initial:e}")]
    Diverged {
        iteration: usize,
        energy: f64,
        initial: f64,
    },

    #[error("oracle budget exceeded: {0}")]
    BudgetExceeded(String),
}
