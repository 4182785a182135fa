use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed numeric input: non-finite entries, shape mismatches, bad data files.
    #[error("input error: {0}")]
    Input(String),

    /// The design matrices violate a rank or dimension requirement.
    #[error("design error: {0}")]
    Design(String),

    /// The Hadamard balancing system has no (numerically) exact solution, so
    /// the bias-corrected statistic is not defined for this design.
    #[error("no balancing solution: relative residual {relative_residual:.3e} exceeds tolerance {tolerance:.0e}")]
    NoBalancingSolution { relative_residual: f64, tolerance: f64 },

    #[error("group {group}: {size} observations with rank(A_i) = {rank}; need N_i - k_i >= 2")]
    DegenerateGroup { group: usize, size: usize, rank: usize },

    #[error("group {group}: variance estimator undefined ({reason})")]
    EstimatorUndefined { group: usize, reason: String },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },

    #[error("replication {replication}: {source}")]
    Replication {
        replication: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::File {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
