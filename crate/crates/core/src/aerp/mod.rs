//! Attention-based eviction and recomputation.
//!
//! Each head keeps at most `n_prime` tokens. When a head is full the incoming
//! token replaces the resident with the smallest accumulated importance,
//! skipping the attention sinks and the most recent tokens. Tokens that stay
//! resident in a majority of heads may be stored as their shared input vector
//! and have K/V recomputed on use.

mod cache;
mod format;
mod prefill;

pub use cache::{AerpCache, EvictionEvent, PolicyStats, RecomputeOptions};
pub use format::{bytes_input_vector, bytes_kv_split, choose_format, recompute_kv, StorageFormat};
pub use prefill::{popular_tokens, popularity_stability, prefill_select, rank_for_recompute};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Position of a token in the sequence, starting at 0.
pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheBudget {
    pub n_prime: usize,
    pub sink_count: usize,
    pub recent_window: usize,
}

impl CacheBudget {
    pub fn new(n_prime: usize, sink_count: usize, recent_window: usize) -> Result<Self> {
        let b = Self {
            n_prime,
            sink_count,
            recent_window,
        };
        b.validate()?;
        Ok(b)
    }

    /// Sinks and recents are counted inside the budget, so at least one slot
    /// must remain evictable.
    pub fn validate(&self) -> Result<()> {
        if self.sink_count + self.recent_window >= self.n_prime {
            return Err(config_err(format!(
                "budget n_prime={} must exceed sink_count + recent_window = {}",
                self.n_prime,
                self.sink_count + self.recent_window
            )));
        }
        Ok(())
    }

    pub fn is_sink(&self, id: TokenId) -> bool {
        (id as usize) < self.sink_count
    }

    /// Whether `id` is one of the `recent_window` tokens immediately before `incoming`.
    pub fn is_recent(&self, id: TokenId, incoming: TokenId) -> bool {
        id < incoming && (incoming - id) as usize <= self.recent_window
    }

    pub fn is_protected(&self, id: TokenId, incoming: TokenId) -> bool {
        self.is_sink(id) || self.is_recent(id, incoming)
    }
}
