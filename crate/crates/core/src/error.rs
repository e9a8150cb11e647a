use thiserror::Error;

/// Errors raised by the estimation, prediction and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdrError {
    #[error("points {0} and {1} share the same location")]
    DuplicatePoints(usize, usize),
    #[error("non-finite coordinate at point {0}")]
    NonFiniteCoordinate(usize),
    #[error("correlation decay rate must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("correlation matrix is numerically singular (smallest eigenvalue {0:e})")]
    NearSingularH(f64),
    #[error("point {0} has no neighbor within distance {1}")]
    IsolatedPoint(usize, f64),
    #[error("I - theta W is numerically singular at theta = {0}")]
    SingularWTheta(f64),
    #[error("centered basis matrix has rank {rank} < {expected}")]
    RankDeficientF { rank: usize, expected: usize },
    #[error("response is constant")]
    ConstantResponse,
    #[error("value {0} lies outside the recorded slice range")]
    OutOfSliceRange(f64),
    #[error("F'F is singular")]
    SingularFF,
    #[error("least squares residual covariance is singular")]
    SingularDeltaLS,
    #[error("residual covariance of the reduced-rank fit is singular")]
    SingularDeltaHat,
    #[error("rank {d} outside 0..={max}")]
    RankOutOfRange { d: usize, max: usize },
    #[error("eigendecomposition failed: {0}")]
    EigenFailure(String),
    #[error("log-likelihood is not finite")]
    NonFiniteLoglik,
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("invalid grid value {0}")]
    InvalidGridValue(f64),
    #[error("log-likelihoods decrease between rank {0} and {1}")]
    NonMonotoneLogliks(usize, usize),
    #[error("cross-validation failed for every candidate dimension")]
    CvFailed,
    #[error("training reference is empty")]
    EmptyReference,
    #[error("bandwidth grid is degenerate: {0}")]
    DegenerateGrid(String),
    #[error("covariance matrix is not positive definite")]
    CovarianceNotPD,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("need more observations: {0}")]
    InsufficientSamples(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, SdrError>;
