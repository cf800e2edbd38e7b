use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent network or run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite input: {0}")]
    NumericInput(String),

    /// Caller violated an operation precondition.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("covariance matrix is not positive definite even with diagonal jitter {jitter:e}")]
    Conditioning { jitter: f64 },

    #[error("pool point {index} has posterior variance {variance:e} at or below the update threshold {threshold:e}")]
    DegeneratePivot {
        index: usize,
        variance: f64,
        threshold: f64,
    },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
