use std::io;

use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("regime error: {0}")]
    Regime(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("root bracketing failed: {0}")]
    RootBracket(String),
    #[error("ODE solver failure: {0}")]
    OdeFailure(String),
    #[error("ellipticity violation: {0}")]
    Ellipticity(String),
    #[error("solution diverged: {0}")]
    Divergence(String),
    #[error("degenerate bandwidth: {0}")]
    Bandwidth(String),
    #[error("ordering error: {0}")]
    Ordering(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("cache format error: {0}")]
    CacheFormat(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<LabError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    /// Wraps an error with the pipeline stage it came from.
    pub fn at(self, stage: &'static str) -> Self {
        LabError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
