//! Corpus generation, evaluation metrics and the end-to-end experiment.

mod eval;
mod pipeline;

pub use eval::{solve_corpus, solve_one, Corpus, EvalReport, EvalRow, Method, MethodSummary, SolverContext};
pub use pipeline::{generate_corpus, instance_name, train_run, ExperimentConfig, TrainedRun};

use thiserror::Error;

use crate::instance::InstanceError;
use crate::neural::ModelError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
