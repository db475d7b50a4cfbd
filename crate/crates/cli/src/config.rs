//! Run configuration file: one JSON object, every key optional.
//!
//! ```json
//! {
//!   "scenario": "data/planted",
//!   "catalog": "data/planted/catalog.jsonl",
//!   "split": { "seed": 0, "train_fraction": 0.8 },
//!   "model": { "top_k": 8, "loss_mode": "classification" },
//!   "train": { "epochs_stage1": 20, "seed": 3 }
//! }
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use asllm_core::model::ModelConfig;
use asllm_core::training::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut c: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        c.scenario = c.scenario.map(|p| base.join(p));
        c.catalog = c.catalog.map(|p| base.join(p));
        Ok(c)
    }

    pub fn scenario(&self) -> Result<&Path> {
        self.scenario
            .as_deref()
            .ok_or_else(|| CliError::config("no scenario directory (config key \"scenario\" or --scenario)"))
    }

    pub fn catalog(&self) -> Result<&Path> {
        self.catalog
            .as_deref()
            .ok_or_else(|| CliError::config("no embedding catalog (config key \"catalog\" or --catalog)"))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| CliError::config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(())
    }
}
