use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("density value {value} at cell {index} outside [0, 1]")]
    DensityOutOfRange { index: usize, value: f64 },

    #[error("mass mismatch: {source_mass} vs {target_mass} (tolerance {tolerance})")]
    MassMismatch {
        source_mass: f64,
        target_mass: f64,
        tolerance: f64,
    },

    #[error("exact transport limited to {cap} active cells, got {active}")]
    CellCapExceeded { active: usize, cap: usize },

    #[error("sinkhorn did not converge after {iterations} iterations (marginal violation {violation:.3e})")]
    SinkhornNotConverged { iterations: usize, violation: f64 },

    #[error("network simplex failed: {0}")]
    Simplex(String),

    #[error("vector field divergence {divergence:.3e} exceeds tolerance {tolerance:.3e}")]
    DivergenceViolation { divergence: f64, tolerance: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid kernel: {0}")]
    Kernel(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not enough samples: {0}")]
    TooFewSamples(String),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
