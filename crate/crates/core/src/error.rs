use thiserror::Error;

/// Errors produced by the exact and approximate fGn machinery.
#[derive(Debug, Error)]
pub enum FgnError {
    #[error("{name} = {value} is outside the admissible range {range}")]
    Domain {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("numerical breakdown at step {step}: innovation variance {variance:e} below floor")]
    Breakdown { step: usize, variance: f64 },

    #[error("matrix is not positive definite: pivot {pivot:e} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("optimizer stopped after {iterations} iterations without converging (best objective {objective:e})")]
    NoConvergence {
        iterations: usize,
        objective: f64,
        best: Vec<f64>,
    },

    #[error("coefficient fit failed at grid point {index} (H = {hurst}): {source}")]
    GridFit {
        index: usize,
        hurst: f64,
        #[source]
        source: Box<FgnError>,
    },

    #[error("observation model has no observed points")]
    NoData,

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("replication {index} failed: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<FgnError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FgnError>;

pub(crate) fn domain(name: &'static str, value: f64, range: &'static str) -> FgnError {
    FgnError::Domain { name, value, range }
}
