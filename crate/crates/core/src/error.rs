use thiserror::Error;

/// Errors raised across the compression toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no ascent direction: every leader component has infinite divergence")]
    NoAscentDirection,

    #[error("estimator refused: {0}")]
    EstimatorRefused(String),

    #[error("linear program is infeasible")]
    LpInfeasible,

    #[error("linear program is unbounded")]
    LpUnbounded,

    #[error("linear program exceeded {0} pivots")]
    LpPivotLimit(usize),

    #[error("sigma {0} is infeasible, every divergence is at least 1")]
    InfeasibleSigma(f64),

    #[error("grid of {0} policies exceeds the exhaustive search limit of {1}")]
    GridTooLarge(usize, usize),

    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
