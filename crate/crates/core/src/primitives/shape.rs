use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Transformer geometry used by both the policy simulation and the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelShape {
    pub channels: usize,
    pub heads: usize,
    pub layers: usize,
    /// Hidden width of the gated feed-forward block.
    pub ffn_dim: usize,
}

impl ModelShape {
    pub fn new(channels: usize, heads: usize, layers: usize) -> Result<Self> {
        Self::with_ffn(channels, heads, layers, default_ffn_dim(channels))
    }

    pub fn with_ffn(channels: usize, heads: usize, layers: usize, ffn_dim: usize) -> Result<Self> {
        let shape = Self {
            channels,
            heads,
            layers,
            ffn_dim,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || self.layers == 0 {
            return Err(config_err("model channels, heads and layers must all be >= 1"));
        }
        if !self.channels.is_multiple_of(self.heads) {
            return Err(config_err(format!(
                "heads ({}) must divide channels ({})",
                self.heads, self.channels
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// 7B-class decoder: 4096 channels, 32 heads, 32 layers.
    pub fn llama2_7b() -> Self {
        Self {
            channels: 4096,
            heads: 32,
            layers: 32,
            ffn_dim: 11008,
        }
    }

    /// Weight bytes of one decoder layer at 8-bit precision (Q, K, V, O and a gated FFN).
    pub fn layer_weight_bytes(&self) -> u64 {
        let c = self.channels as u64;
        4 * c * c + 3 * c * self.ffn_dim as u64
    }
}

/// `8/3 * channels`, rounded up to a multiple of 256.
pub fn default_ffn_dim(channels: usize) -> usize {
    let raw = (8 * channels).div_ceil(3);
    raw.div_ceil(256) * 256
}
