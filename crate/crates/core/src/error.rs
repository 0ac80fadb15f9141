use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NonSymmetric { asymmetry: f64 },
    #[error("vector of length {0} is not n(n+1)/2 for any n")]
    BadLength(usize),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("matrix is not stable (spectral radius {0:.6})")]
    Unstable(f64),
    #[error("discounted closed loop is not stable (spectral radius of sqrt(gamma) L is {0:.6})")]
    DiscountedUnstable(f64),
    #[error("decay rate {rate} does not exceed the spectral radius {radius}")]
    RateTooSmall { rate: f64, radius: f64 },
    #[error("decay certificate violated at power {power}")]
    DecayCheckFailed { power: usize },
    #[error("Riccati iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("Riccati solution does not stabilize the pair (closed-loop radius {0:.6})")]
    Unstabilizable(f64),
    #[error("matrix is not positive definite")]
    NotPD,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("trajectory contains non-finite values")]
    NonFinite,
    #[error("regressor matrix has rank {rank}, needs {needed}")]
    RankDeficient { rank: usize, needed: usize },
    #[error("block count {blocks} invalid for length {len}")]
    BadBlockCount { len: usize, blocks: usize },
    #[error("no trajectory length below {0} satisfies the requirement")]
    NoSolution(u64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no stable instance among {0} draws")]
    NoStableInstance(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
