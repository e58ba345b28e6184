//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("mesh format error at line {line}: {message}")]
    MeshFormat { line: usize, message: String },

    #[error("mesh topology error: {0}")]
    Topology(String),

    #[error("density error: {0}")]
    Density(String),

    #[error("lead definition error: {0}")]
    Lead(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("right-hand side incompatible with the singular operator: |1^T b| = {defect:.3e} exceeds {limit:.3e}")]
    IncompatibleRhs { defect: f64, limit: f64 },

    #[error("solver did not converge: {iterations} iterations, relative residual {residual:.3e} (tolerance {tolerance:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("low-rank factorization error: {0}")]
    LowRank(String),

    #[error("activation model error: {0}")]
    Activation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("pipeline stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
