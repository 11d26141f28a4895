//! Desk-scale optimization: TBPTT loop carrying attention state across
//! minibatches, AdamW, the synthetic repetition task and the interleaved
//! translation corpus format.

mod gradcheck;
mod optim;
mod schedule;
mod tasks;
mod trainer;

pub use gradcheck::gradient_check;
pub use optim::{clip_global_norm, global_grad_norm, AdamW};
pub use schedule::lr_at;
pub use tasks::{
    make_interleaved_corpus, make_repetition_stream, InterleavedCorpus, RepetitionStream,
    TaskStream,
};
pub use trainer::{train, train_with_callback, StepMetrics, TrainMetrics};

use crate::model::{ModelError, ModelParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("corpus ingestion failed at line {line}: {reason}")]
    Ingestion { line: usize, reason: String },
    #[error("loss diverged (non-finite) at step {step}")]
    Diverged {
        step: usize,
        /// Parameters as of the last finite-loss step.
        last_params: Box<ModelParams>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_peak: f64,
    pub warmup_steps: usize,
    pub lr_final: f64,
    pub weight_decay: f32,
    pub clip_norm: f32,
    /// Tokens per minibatch chunk.
    pub seq_len: usize,
    /// Parallel independent streams.
    pub batch_size: usize,
    pub steps: usize,
    /// Cut gradient flow through attention keys and values at every step.
    pub detach_attention: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_peak: 1e-3,
            warmup_steps: 1000,
            lr_final: 1e-4,
            weight_decay: 0.1,
            clip_norm: 1.0,
            seq_len: 256,
            batch_size: 1,
            steps: 10_000,
            detach_attention: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr_peak > self.lr_final && self.lr_final > 0.0) {
            return Err(TrainError::Config(format!(
                "need lr_peak > lr_final > 0, got {} and {}",
                self.lr_peak, self.lr_final
            )));
        }
        if self.seq_len < 2 {
            return Err(TrainError::Config("seq_len must be >= 2".into()));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(TrainError::Config(
                "batch_size and steps must be positive".into(),
            ));
        }
        if self.clip_norm <= 0.0 {
            return Err(TrainError::Config("clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.weight_decay) {
            return Err(TrainError::Config("weight_decay outside [0,1)".into()));
        }
        Ok(())
    }
}
