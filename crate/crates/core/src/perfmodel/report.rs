use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::run::Scenario;
use super::Lifetimes;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "kvedram-report/1";

/// Joules per category. `total` is the sum of the six categories, added in
/// declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Energy {
    pub compute: f64,
    pub weights: f64,
    pub kv_cache: f64,
    pub refresh: f64,
    pub leakage: f64,
    pub dram: f64,
    pub total: f64,
}

impl Energy {
    pub fn category_sum(&self) -> f64 {
        self.compute + self.weights + self.kv_cache + self.refresh + self.leakage + self.dram
    }

    pub fn on_chip(&self) -> f64 {
        self.compute + self.weights + self.kv_cache + self.refresh + self.leakage
    }

    /// Refresh as a fraction of on-chip energy.
    pub fn refresh_share(&self) -> f64 {
        let on = self.on_chip();
        if on > 0.0 {
            self.refresh / on
        } else {
            0.0
        }
    }
}

/// Seconds. `compute`, `dram` and `on_chip` sum each phase's bound for that
/// resource; `total` sums each phase's binding bound.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Latency {
    pub total: f64,
    pub prefill: f64,
    pub decode: f64,
    pub compute: f64,
    pub dram: f64,
    pub on_chip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub decode_steps: u64,
    pub evictions: u64,
    pub recomputations: u64,
    pub admitted_kv_split: u64,
    pub admitted_input_vector: u64,
    pub frozen_format_drops: u64,
    /// Input-vector tokens allowed per layer and sequence.
    pub recompute_cap: u64,
    pub dram_bytes: u64,
    pub weight_bytes: u64,
    pub kv_onchip_bytes: u64,
    pub peak_kv_bytes: u64,
    pub refresh_passes: [u64; 4],
    /// Retention failures per refresh group, in refresh-group order.
    pub flips: [u64; 4],
    pub flips_total: u64,
}

/// Data lifetimes of one layer's attention block at the run's mean transfer
/// times, under both schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifetimeReport {
    pub t_sram: f64,
    pub t_edram: f64,
    pub baseline: Lifetimes,
    pub kelle: Lifetimes,
    /// Total of whichever schedule this system uses.
    pub scheduled_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    /// SHA-256 of the canonical JSON of `scenario`.
    pub config_hash: String,
    pub system: String,
    pub label: String,
    pub seed: u64,
    pub scenario: Scenario,
    pub latency: Latency,
    pub energy: Energy,
    pub refresh_share_on_chip: f64,
    pub counters: Counters,
    pub lifetime: LifetimeReport,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        let found = v.get("schema_version").and_then(|x| x.as_str()).unwrap_or("<missing>");
        if found != SCHEMA_VERSION {
            return Err(Error::SchemaMismatch(found.to_string(), SCHEMA_VERSION.to_string()));
        }
        Ok(serde_json::from_value(v)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryDiff {
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    /// `a / b`; 1 when both are zero and absent when only `b` is.
    pub ratio: Option<f64>,
}

impl CategoryDiff {
    pub fn new(a: f64, b: f64) -> Self {
        let ratio = if b != 0.0 {
            Some(a / b)
        } else if a == 0.0 {
            Some(1.0)
        } else {
            None
        };
        Self { a, b, delta: a - b, ratio }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDiff {
    pub a_system: String,
    pub b_system: String,
    pub energy: BTreeMap<String, CategoryDiff>,
    pub latency: BTreeMap<String, CategoryDiff>,
    pub counters: BTreeMap<String, CategoryDiff>,
}

fn numeric_fields<T: Serialize>(x: &T) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    if let Ok(serde_json::Value::Object(map)) = serde_json::to_value(x) {
        for (k, v) in map {
            match v {
                serde_json::Value::Number(n) => {
                    out.insert(k, n.as_f64().unwrap_or(f64::NAN));
                }
                serde_json::Value::Array(items) => {
                    for (i, item) in items.iter().enumerate() {
                        if let Some(f) = item.as_f64() {
                            out.insert(format!("{k}[{i}]"), f);
                        }
                    }
                }
                _ => {}
            }
        }
    }
    out
}

fn diff_maps(a: BTreeMap<String, f64>, b: BTreeMap<String, f64>) -> BTreeMap<String, CategoryDiff> {
    a.into_iter()
        .map(|(k, va)| {
            let vb = b.get(&k).copied().unwrap_or(0.0);
            (k, CategoryDiff::new(va, vb))
        })
        .collect()
}

/// Per-category comparison of `a` against `b`.
pub fn report_diff(a: &RunReport, b: &RunReport) -> Result<ReportDiff> {
    for r in [a, b] {
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaMismatch(r.schema_version.clone(), SCHEMA_VERSION.to_string()));
        }
    }
    Ok(ReportDiff {
        a_system: a.system.clone(),
        b_system: b.system.clone(),
        energy: diff_maps(numeric_fields(&a.energy), numeric_fields(&b.energy)),
        latency: diff_maps(numeric_fields(&a.latency), numeric_fields(&b.latency)),
        counters: diff_maps(numeric_fields(&a.counters), numeric_fields(&b.counters)),
    })
}
