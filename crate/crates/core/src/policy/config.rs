use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{ACTION_DIM, CHUNK_LEN, HISTORY_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden width.
    pub d_model: usize,
    pub n_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub n_queries: usize,
    pub chunk_len: usize,
    pub action_dim: usize,
    /// Feedforward width as a multiple of `d_model`.
    pub ffn_mult: usize,
    /// Add one pooled-image token per frame next to the feature token.
    pub use_grid: bool,
    pub lambda_phase: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            n_queries: CHUNK_LEN,
            chunk_len: CHUNK_LEN,
            action_dim: ACTION_DIM,
            ffn_mult: 2,
            use_grid: false,
            lambda_phase: 0.1,
            beta: 1.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small double-precision configuration for gradient verification.
    pub fn tiny() -> Self {
        ModelConfig {
            d_model: 16,
            encoder_layers: 1,
            ..ModelConfig::default()
        }
    }

    pub fn tokens_per_frame(&self) -> usize {
        if self.use_grid {
            2
        } else {
            1
        }
    }

    /// Memory length before state injection: frame tokens plus the prompt token.
    pub fn memory_len(&self) -> usize {
        self.tokens_per_frame() * HISTORY_LEN + 1
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fixed = [
            ("decoder_layers", self.decoder_layers, 2),
            ("n_queries", self.n_queries, CHUNK_LEN),
            ("chunk_len", self.chunk_len, CHUNK_LEN),
            ("action_dim", self.action_dim, ACTION_DIM),
        ];
        for (name, got, want) in fixed {
            if got != want {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be {want}, got {got}"
                )));
            }
        }
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.encoder_layers == 0 || self.ffn_mult == 0 {
            return Err(Error::InvalidConfig(
                "encoder_layers and ffn_mult must be positive".into(),
            ));
        }
        if self.beta != 1.0 {
            return Err(Error::InvalidConfig(format!(
                "beta is fixed at 1, got {}",
                self.beta
            )));
        }
        if !(self.lambda_phase.is_finite() && self.lambda_phase >= 0.0) {
            return Err(Error::InvalidConfig("lambda_phase must be >= 0".into()));
        }
        Ok(())
    }
}
