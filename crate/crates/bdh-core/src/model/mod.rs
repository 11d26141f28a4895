//! The BDH-GPU architecture: parameters, forward passes, generation, merging.

mod forward;
mod params;
mod stream;

pub use forward::{
    forward_parallel, loss_next_token, ActivationTrace, ParamGrads, ParamNodes, TrainGraph,
};
pub(crate) use forward::loss_next_token_carried;
pub use params::{concat_models, init_params, param_count, ModelParams};
pub use stream::{forward_step, forward_streaming_traced, generate, StreamState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token {token} out of range for vocab {vocab}")]
    Token { token: usize, vocab: usize },
    #[error("cannot merge models: {0}")]
    Merge(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Hyperparameters of a BDH-GPU model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Neuron count; the only dimension the model scales in.
    pub n: usize,
    /// Low-rank (synaptic) dimension.
    pub d: usize,
    /// Layer count; all layers share one parameter set.
    pub layers: usize,
    /// Head count; heads only split the neuron dimension for attention.
    pub heads: usize,
    pub vocab_size: usize,
    pub dropout: f32,
    /// Token periods of the fastest and slowest RoPE pair, geometric in between.
    pub rope_wavelength_range: (f32, f32),
    /// Base per-step state decay; 1.0 disables damping. Head k in 0..h uses
    /// gamma^((k+1)/h), a geometric family anchored at the base value.
    pub alibi_gamma: f32,
    pub eps: f32,
}

impl ModelConfig {
    /// Listing-style defaults at an arbitrary neuron count.
    pub fn new(n: usize) -> Self {
        Self {
            n,
            d: 256,
            layers: 6,
            heads: 4,
            vocab_size: 256,
            dropout: 0.05,
            rope_wavelength_range: (1.0, n as f32),
            alibi_gamma: 1.0,
            eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.heads == 0 || self.n == 0 {
            return err("n and heads must be positive".into());
        }
        if self.n % self.heads != 0 {
            return err(format!("n={} not divisible by heads={}", self.n, self.heads));
        }
        if self.n % (2 * self.heads) != 0 {
            return err(format!(
                "n={} must split into coordinate pairs per head (2*heads={})",
                self.n,
                2 * self.heads
            ));
        }
        if self.d < 1 {
            return err("d must be >= 1".into());
        }
        if self.layers < 1 {
            return err("layers must be >= 1".into());
        }
        if self.vocab_size < 2 {
            return err("vocab_size must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0,1)", self.dropout));
        }
        let (lo, hi) = self.rope_wavelength_range;
        if !(lo > 0.0 && hi >= lo) {
            return err(format!("rope wavelength range ({lo}, {hi}) invalid"));
        }
        if !(self.alibi_gamma > 0.0 && self.alibi_gamma <= 1.0) {
            return err(format!("alibi_gamma {} outside (0,1]", self.alibi_gamma));
        }
        if !(self.eps > 0.0) {
            return err("eps must be > 0".into());
        }
        Ok(())
    }

    /// Neurons per head.
    pub fn nh(&self) -> usize {
        self.n / self.heads
    }

    /// RoPE coordinate pairs per head.
    pub fn pairs_per_head(&self) -> usize {
        self.n / (2 * self.heads)
    }

    /// Per-step state decay for one head.
    pub fn head_gamma(&self, head: usize) -> f32 {
        if self.alibi_gamma == 1.0 {
            1.0
        } else {
            self.alibi_gamma.powf((head + 1) as f32 / self.heads as f32)
        }
    }
}
