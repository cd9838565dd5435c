use thiserror::Error;

/// Errors raised by the analysis and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no strictly positive right eigenvector for the dominant eigenvalue: {0}")]
    NoPositiveRightEigenvector(String),

    #[error("dominant eigenvalue {0} is not positive")]
    NonPositiveLambda(f64),

    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ODE state left the admissible region at t = {t}: total mass {mass}")]
    BlowUp { t: f64, mass: f64 },

    #[error("policy has no analytic mean: {0}")]
    MeanUnavailable(String),

    #[error("policy sample rejected: {0}")]
    PolicySample(String),

    #[error("branching process went extinct after {0} splits")]
    Extinction(u64),

    #[error("reachable state space exceeds {limit} states")]
    StateSpaceTooLarge { limit: usize },

    #[error("the limit set is a single point (nu1 = 1); weights are only defined for reducible profiles")]
    NotReducible,

    #[error("rate fit needs at least 6 checkpoints spanning 2 decades, got {count} spanning {decades:.2}")]
    InsufficientCheckpoints { count: usize, decades: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
