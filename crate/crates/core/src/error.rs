use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid access point {id}: {reason}")]
    InvalidProfile { id: usize, reason: String },

    #[error("invalid offer: {0}")]
    InvalidOffer(String),

    #[error("invalid operator parameters: {0}")]
    InvalidParams(String),

    #[error("{what} needs at least {needed} access points, got {got}")]
    TooFewAps {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("the two-AP closed form requires distinct costs (both are {0})")]
    EqualCosts(f64),

    #[error(
        "salary rate {salary_rate} is not below the cost {cost}; the optimum there is p = c, B = 0"
    )]
    SalaryNotBelowCost { salary_rate: f64, cost: f64 },

    #[error("dimension mismatch: expected {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no convergence: {0}")]
    NotConverged(String),

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
