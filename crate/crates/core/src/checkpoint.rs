//! JSON checkpoints: trained parameters plus what is needed to reproduce
//! the held-out evaluation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aslib_io::{FeatureStats, SplitIndex};
use crate::model::ModelParams;

pub const CHECKPOINT_FORMAT: &str = "asllm-checkpoint/1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint format {0:?}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub scenario_id: String,
    pub split: SplitIndex,
    pub train_fraction: f64,
    pub feature_stats: FeatureStats,
    pub stage1_probabilities: Option<Vec<f64>>,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(
        scenario_id: &str,
        split: SplitIndex,
        train_fraction: f64,
        feature_stats: FeatureStats,
        stage1_probabilities: Option<Vec<f64>>,
        params: ModelParams,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            scenario_id: scenario_id.to_string(),
            split,
            train_fraction,
            feature_stats,
            stage1_probabilities,
            params,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(c.format));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
