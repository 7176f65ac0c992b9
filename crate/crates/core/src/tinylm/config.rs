use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Shape of the decoder-only transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub context_len: usize,
    /// Hidden width of the feed-forward block, as a multiple of `d_model`.
    pub ff_mult: usize,
    /// Layer whose attention queries are tapped and steered.
    pub intervention_layer: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 64,
            context_len: 128,
            ff_mult: 4,
            intervention_layer: 2,
        }
    }
}

impl LmConfig {
    /// Config with the intervention site at the middle layer.
    pub fn new(n_layers: usize, n_heads: usize, d_model: usize, context_len: usize) -> Result<Self> {
        let cfg = LmConfig {
            n_layers,
            n_heads,
            d_model,
            context_len,
            ff_mult: 4,
            intervention_layer: n_layers / 2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ff_dim(&self) -> usize {
        self.d_model * self.ff_mult
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.context_len == 0 || self.ff_mult == 0 {
            return bad("lm dimensions must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.intervention_layer >= self.n_layers {
            return bad(format!("intervention layer {} outside [0, {})", self.intervention_layer, self.n_layers));
        }
        Ok(())
    }
}
