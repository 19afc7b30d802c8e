use thiserror::Error;

/// Errors raised anywhere in the testing pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("untestable hypothesis: rank(X K_A) = {rank} equals N = {n}, so the zero-thresholding function vanishes for every response")]
    Untestable { rank: usize, n: usize },
    #[error("statistic not applicable: {0}")]
    NotApplicable(String),
    #[error("degenerate statistic: {0}")]
    Degenerate(String),
    #[error("insufficient draws: M = {m} but level {alpha} needs at least {min}")]
    InsufficientDraws { m: usize, alpha: f64, min: usize },
    #[error("calibration was built for statistic `{expected}`, got `{got}`")]
    StatisticMismatch { expected: String, got: String },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("value outside the link domain: {0}")]
    DomainError(String),
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
    #[error("problem too large for the validation solver: {0}")]
    UnsupportedScale(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("unsupported dimension: R = {0} (only 1 or 2 are supported)")]
    UnsupportedDimension(usize),
    #[error("overflow: {0}")]
    Overflow(String),
}

pub type Result<T> = std::result::Result<T, Error>;
