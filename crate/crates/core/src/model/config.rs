use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::rope::RopeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub vocab_size: usize,
    pub trained_context: usize,
    pub rope_base: f64,
    /// Hidden width of the MLP as a multiple of `d_model`.
    pub mlp_ratio: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            head_dim: 16,
            vocab_size: 64,
            trained_context: 64,
            rope_base: 10_000.0,
            mlp_ratio: 4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.n_layers == 0 {
            return fail("n_layers must be >= 1".into());
        }
        if self.n_heads == 0 || self.d_model != self.n_heads * self.head_dim {
            return fail(format!(
                "d_model ({}) must equal n_heads ({}) x head_dim ({})",
                self.d_model, self.n_heads, self.head_dim
            ));
        }
        if self.head_dim % 2 != 0 {
            return fail(format!("head_dim {} is odd", self.head_dim));
        }
        if self.head_dim < 4 || !(self.head_dim / 2).is_power_of_two() {
            return fail(format!(
                "head_dim/2 must be a power of two >= 2, head_dim is {}",
                self.head_dim
            ));
        }
        if self.vocab_size < 2 {
            return fail("vocab_size must be >= 2".into());
        }
        if self.trained_context < 2 {
            return fail("trained_context must be >= 2".into());
        }
        if self.mlp_ratio == 0 {
            return fail("mlp_ratio must be >= 1".into());
        }
        self.rope()?;
        Ok(())
    }

    pub fn rope(&self) -> Result<RopeConfig, ModelError> {
        Ok(RopeConfig::new(self.head_dim, self.rope_base)?)
    }

    pub fn mlp_hidden(&self) -> usize {
        self.d_model * self.mlp_ratio
    }

    pub fn num_pairs(&self) -> usize {
        self.head_dim / 2
    }

    /// Embeddings + per-layer (two norms, four attention projections, two
    /// MLP matrices) + final norm + output head. No biases.
    pub fn parameter_count(&self) -> usize {
        let (v, d, m) = (self.vocab_size, self.d_model, self.mlp_hidden());
        v * d + self.n_layers * (2 * d + 4 * d * d + 2 * d * m) + d + d * v
    }
}
