//! Synthetic workloads, task presets and the attention-trace file format.

mod synthetic;
mod trace;

pub use synthetic::{expected_gini, gini, DecodeStep, ToyModel, Workload, SALIENCE_RANKS};
pub use trace::{
    generate_trace, load_trace, prefill_cache, read_trace, replay_step, replay_trace, step_groups, write_trace, TraceRecord,
};

use serde::{Deserialize, Serialize};

use crate::aerp::CacheBudget;
use crate::error::{config_err, Result};
use crate::primitives::ModelShape;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub shape: ModelShape,
    /// Context tokens processed in parallel before decoding.
    pub prefill: usize,
    pub decode: usize,
    pub batch: usize,
    /// Zipf exponent of per-token salience. 0 gives uniform attention.
    pub skew: f64,
    /// Probability that a token's salience rank is shared by all heads.
    pub head_correlation: f64,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.batch == 0 {
            return Err(config_err("batch must be >= 1"));
        }
        if !(self.skew >= 0.0) || !self.skew.is_finite() {
            return Err(config_err("skew must be a finite value >= 0"));
        }
        if !(0.0..=1.0).contains(&self.head_correlation) {
            return Err(config_err("head_correlation must lie in [0, 1]"));
        }
        if self.prefill + self.decode > u32::MAX as usize {
            return Err(config_err("sequence too long for 32-bit token ids"));
        }
        Ok(())
    }

    pub fn total_tokens(&self) -> usize {
        self.prefill + self.decode
    }
}

/// A task geometry: sequence lengths, batch and the matching cache budget.
///
/// `batch` is the largest power of two up to 16 for which the uncompressed
/// 16-bit KV cache of the 7B shape still fits in 16 GiB of DRAM next to the
/// 8-bit weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preset {
    pub name: &'static str,
    pub prefill: usize,
    pub decode: usize,
    pub batch: usize,
    pub n_prime: usize,
    pub recent_window: usize,
    pub sink_count: usize,
}

pub const PRESETS: [Preset; 4] = [
    Preset {
        name: "la",
        prefill: 128,
        decode: 512,
        batch: 16,
        n_prime: 128,
        recent_window: 64,
        sink_count: 10,
    },
    Preset {
        name: "tq",
        prefill: 512,
        decode: 2048,
        batch: 4,
        n_prime: 1024,
        recent_window: 512,
        sink_count: 10,
    },
    Preset {
        name: "qa",
        prefill: 1024,
        decode: 5120,
        batch: 2,
        n_prime: 1024,
        recent_window: 512,
        sink_count: 10,
    },
    Preset {
        name: "pg19",
        prefill: 512,
        decode: 8192,
        batch: 2,
        n_prime: 2048,
        recent_window: 1024,
        sink_count: 10,
    },
];

pub const DEFAULT_SKEW: f64 = 1.0;
pub const DEFAULT_HEAD_CORRELATION: f64 = 0.5;

pub fn preset(name: &str) -> Result<Preset> {
    PRESETS
        .iter()
        .find(|p| p.name.eq_ignore_ascii_case(name))
        .copied()
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
            config_err(format!("unknown preset {name:?}; expected one of {}", names.join(", ")))
        })
}

impl Preset {
    /// 7B-class model at the preset batch.
    pub fn spec(&self, seed: u64) -> WorkloadSpec {
        WorkloadSpec {
            shape: ModelShape::llama2_7b(),
            prefill: self.prefill,
            decode: self.decode,
            batch: self.batch,
            skew: DEFAULT_SKEW,
            head_correlation: DEFAULT_HEAD_CORRELATION,
            seed,
        }
    }

    pub fn budget(&self) -> CacheBudget {
        CacheBudget {
            n_prime: self.n_prime,
            sink_count: self.sink_count,
            recent_window: self.recent_window,
        }
    }
}
