//! JSON run configuration, with unknown keys rejected outright: a silent
//! typo in an experiment config is the main reproducibility hazard.

use crate::model::ModelConfig;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config rejected: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config invalid: {0}")]
    Invalid(String),
}

/// Which token source a run trains on.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum TaskSpec {
    #[serde(rename = "repetition")]
    Repetition {
        warmup_len: usize,
        word_len: usize,
        reps: usize,
        alphabet: usize,
    },
    #[serde(rename = "corpus")]
    Corpus {
        file_a: String,
        lang_a: String,
        file_b: String,
        lang_b: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: TaskSpec,
    pub out_dir: String,
    pub init_seed: u64,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, RunConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| RunConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunConfigError> {
        self.model
            .validate()
            .map_err(|e| RunConfigError::Invalid(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| RunConfigError::Invalid(e.to_string()))?;
        if let TaskSpec::Repetition { warmup_len, word_len, reps, alphabet } = &self.task {
            if *warmup_len == 0 || *word_len == 0 || *reps == 0 || *alphabet < 2 {
                return Err(RunConfigError::Invalid("repetition task parameters must be positive".into()));
            }
            if *alphabet > self.model.vocab_size {
                return Err(RunConfigError::Invalid(format!(
                    "task alphabet {} exceeds model vocab {}",
                    alphabet, self.model.vocab_size
                )));
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }
}
