//! Simulated active-learning experiments: run specs over seeds, write metric
//! traces, and compare traces across runs.

pub mod compare;
pub mod run;
pub mod spec;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Run(#[from] infotuple::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    /// Process exit status: 2 for bad input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::InvalidSpec(_) | ExperimentError::Schema(_) => 2,
            ExperimentError::Run(_) | ExperimentError::Io(_) => 1,
        }
    }
}
