use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point {theta:?} outside bounds lower={lower:?} upper={upper:?}")]
    OutOfBounds {
        theta: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("covariance factorization failed ({0}); add nugget jitter")]
    Factorization(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("iteration {t} out of range (trace has {len} iterations)")]
    IterationOutOfRange { t: usize, len: usize },

    #[error("target evaluation failed at iteration {iteration}: {source}")]
    Evaluation {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("malformed event log: {0}")]
    EventLog(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
