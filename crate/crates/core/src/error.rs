use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("marginal gain is unbounded: {0}")]
    UnboundedGain(String),

    #[error("no characteristic-time solution: {0}")]
    NoSolution(String),

    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("chain is reducible; states {states:?} are not reachable from every other state")]
    Reducible { states: Vec<u64> },

    #[error("enumeration needs {needed} candidates, budget is {budget}")]
    BudgetExceeded { needed: f64, budget: f64 },

    #[error("zero vector has no direction")]
    ZeroVector,
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
