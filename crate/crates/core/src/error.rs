use thiserror::Error;

/// Errors produced by the precoding library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown builtin constellation `{0}`")]
    UnknownConstellation(String),

    #[error("degenerate alphabet: input covariance is singular")]
    DegenerateAlphabet,

    #[error("invalid constellation: {0}")]
    InvalidConstellation(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is not positive semidefinite")]
    NotPositiveSemidefinite,

    #[error("precoder is not aligned with the channel eigenvectors")]
    MisalignedPrecoder,

    #[error("precoder is singular or ill-conditioned (condition number {0:e})")]
    SingularPrecoder(f64),

    #[error("integration budget exhausted: standard error {achieved:e} above target {target:e}")]
    IntegrationBudget { achieved: f64, target: f64 },

    #[error("invalid integration config: {0}")]
    InvalidIntegration(String),

    #[error("channel has no nonzero eigenmode")]
    NoChannel,

    #[error("empty difference set")]
    EmptyDifferenceSet,

    #[error("infeasible: no unit-power precoder separates the difference set through the channel")]
    Infeasible,

    #[error("dimension cap exceeded: {0}")]
    DimensionCap(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
