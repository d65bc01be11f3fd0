use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("block {block} has shape {actual:?}, expected {expected:?}")]
    DimensionMismatch { block: &'static str, expected: (usize, usize), actual: (usize, usize) },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("stepsize must be positive, got {0}")]
    NonpositiveStepsize(f64),

    #[error("fixed-point conditions violated (cond_a = {cond_a}, cond_b = {cond_b})")]
    ConditionsViolated { cond_a: bool, cond_b: bool },

    #[error("gradients at the optimum sum to a vector of norm {0:e}")]
    GradientSumNonzero(f64),

    #[error("consensus subspace intersection is empty (p = 0)")]
    EmptyIntersection,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("gossip scheme cannot be realized: {0}")]
    InfeasibleScheme(String),

    #[error("initial state breaks the linear invariant (residual {0:e})")]
    InvariantViolated(f64),

    #[error("realization is not explicitly computable: {0}")]
    NotExplicit(String),

    #[error("insufficient decay: {0}")]
    InsufficientDecay(String),

    #[error("Lyapunov value {0:e} is not positive for a nonzero state")]
    NonpositiveV0(f64),

    #[error("solver failure at rho = {rho}: {reason}")]
    SolverFailure { rho: f64, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
