// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Shape of a decoder-only transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Default shape for a given vocabulary.
    pub fn with_vocab(vocab_size: usize) -> Self {
        Self {
            n_layers: 8,
            d_model: 128,
            n_heads: 4,
            ff_mult: 4,
            context_len: 256,
            vocab_size,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.n_layers,
            self.d_model,
            self.n_heads,
            self.ff_mult,
            self.context_len,
            self.vocab_size,
        ];
        if dims.contains(&0) {
            return Err(LabError::Config("all model dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(LabError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.context_len < 32 {
            return Err(LabError::Config(format!(
                "context_len {} below minimum 32",
                self.context_len
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_ff(&self) -> usize {
        self.d_model * self.ff_mult
    }
}
