use std::process::ExitCode;

use thiserror::Error;

use asllm_core::aslib_io::AslibError;
use asllm_core::bound::BoundError;
use asllm_core::checkpoint::CheckpointError;
use asllm_core::embedding_store::EmbeddingError;
use asllm_core::evaluation::EvaluationError;
use asllm_core::training::TrainingError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("config: {0}")]
    Config(String),
    #[error("training: {0}")]
    Training(#[from] TrainingError),
    #[error("evaluation: {0}")]
    Evaluation(#[from] EvaluationError),
    #[error("bound: {0}")]
    Bound(#[from] BoundError),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Parse(_) => 2,
            CliError::Config(_) => 3,
            CliError::Training(_) => 4,
            CliError::Evaluation(_) => 5,
            CliError::Bound(_) => 6,
        })
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl From<AslibError> for CliError {
    fn from(e: AslibError) -> Self {
        match e {
            AslibError::DegenerateSplit(_) => CliError::Config(e.to_string()),
            e => CliError::Parse(e.to_string()),
        }
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
