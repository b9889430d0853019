use thiserror::Error;

/// Errors raised anywhere in the modeling, inference and I/O stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("data error at line {line}: {msg}")]
    DataLine { line: usize, msg: String },

    #[error("numerical error at t={t}: {msg}")]
    Numerical { t: usize, msg: String },

    #[error("range error: {0}")]
    Range(String),

    #[error("line search failed after {halvings} halvings (F'(0) = {slope:e})")]
    LineSearch { halvings: usize, slope: f64 },

    #[error("mode finding diverged at iteration {iteration}: F went from {before} to {after}")]
    Divergence {
        iteration: usize,
        before: f64,
        after: f64,
    },

    #[error("training failed: {0}")]
    Training(String),

    #[error("all {0} items failed")]
    AllItemsFailed(usize),

    #[error("empty result: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn numerical(t: usize, msg: impl Into<String>) -> Self {
        Error::Numerical { t, msg: msg.into() }
    }

    /// True for failures that originate in the inner numerical machinery
    /// (filter breakdown, line search, divergence) rather than bad inputs.
    pub fn is_inner_failure(&self) -> bool {
        matches!(
            self,
            Error::Numerical { .. } | Error::LineSearch { .. } | Error::Divergence { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
