//! Run configuration file.
//!
//! ```toml
//! [run]
//! seed = 1
//! out_dir = "results"
//!
//! [workload]
//! preset = "pg19"          # or prefill/decode below, or trace = "steps.jsonl"
//! skew = 1.0
//! head_correlation = 0.5
//! seed = 7
//!
//! [system]
//! name = "kelle-edram"
//!
//! [aerp]
//! n_prime = 2048
//! sink_count = 10
//! recent_window = 1024
//!
//! [refresh]
//! kind = "two_dim"
//! intervals_s = [0.36e-3, 5.4e-3, 1.44e-3, 7.2e-3]
//!
//! [tech.dram]
//! access_pj_per_byte = 40.0
//! ```
//!
//! Every key is optional. Preset values fill whatever the file leaves out.

use serde::{Deserialize, Serialize};

use crate::aerp::CacheBudget;
use crate::edram::RefreshPolicy;
use crate::error::{Error, FieldError, Result};
use crate::microarch::RsaConfig;
use crate::perfmodel::{Scenario, SystemConfig, SystemKind, TechParams, WorkloadSource};
use crate::primitives::{default_ffn_dim, ModelShape};
use crate::workload::{preset, WorkloadSpec, DEFAULT_HEAD_CORRELATION, DEFAULT_SKEW};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    pub preset: Option<String>,
    pub prefill: Option<usize>,
    pub decode: Option<usize>,
    pub batch: Option<usize>,
    pub skew: Option<f64>,
    pub head_correlation: Option<f64>,
    pub seed: Option<u64>,
    pub trace: Option<String>,
    pub trace_layer: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub channels: Option<usize>,
    pub heads: Option<usize>,
    pub layers: Option<usize>,
    pub ffn_dim: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub name: Option<String>,
    pub rsa_rows: Option<usize>,
    pub rsa_cols: Option<usize>,
    pub clock_hz: Option<f64>,
    pub weight_sram_bytes: Option<u64>,
    pub kv_bytes: Option<u64>,
    pub activation_edram_bytes: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AerpSection {
    pub n_prime: Option<usize>,
    pub sink_count: Option<usize>,
    pub recent_window: Option<usize>,
}

/// Applies to eDRAM systems only; SRAM systems ignore it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefreshSection {
    /// `"uniform"` or `"two_dim"`.
    pub kind: Option<String>,
    pub interval_s: Option<f64>,
    /// MSB-HST, LSB-HST, MSB-LST, LSB-LST.
    pub intervals_s: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub workload: WorkloadSection,
    pub model: ModelSection,
    pub system: SystemSection,
    pub aerp: AerpSection,
    pub refresh: Option<RefreshSection>,
    pub tech: TechParams,
}

pub const DEFAULT_SYSTEM: SystemKind = SystemKind::KelleEdram;
pub const DEFAULT_SINKS: usize = 10;

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(vec![FieldError::new("config", e.message().to_string())]))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn system_kind(&self) -> Result<SystemKind> {
        match &self.system.name {
            Some(n) => SystemKind::parse(n)
                .map_err(|e| Error::InvalidConfig(vec![FieldError::new("system.name", e.to_string())])),
            None => Ok(DEFAULT_SYSTEM),
        }
    }

    /// Resolve into a scenario for the configured system, reporting every
    /// problem found rather than the first.
    pub fn scenario(&self) -> Result<Scenario> {
        let mut errs = Vec::new();
        let kind = match self.system_kind() {
            Ok(k) => Some(k),
            Err(Error::InvalidConfig(e)) => {
                errs.extend(e);
                None
            }
            Err(e) => return Err(e),
        };
        let w = &self.workload;
        let p = match &w.preset {
            Some(name) => match preset(name) {
                Ok(p) => Some(p),
                Err(e) => {
                    errs.push(FieldError::new("workload.preset", e.to_string()));
                    None
                }
            },
            None => None,
        };

        let shape = self.shape(&mut errs);
        let workload = if let Some(path) = &w.trace {
            for (field, set) in [
                ("workload.preset", w.preset.is_some()),
                ("workload.prefill", w.prefill.is_some()),
                ("workload.decode", w.decode.is_some()),
            ] {
                if set {
                    errs.push(FieldError::new(field, "cannot be combined with workload.trace"));
                }
            }
            shape.map(|shape| WorkloadSource::Trace {
                path: path.clone(),
                shape,
                batch: w.batch.unwrap_or(1),
                layer: w.trace_layer.unwrap_or(0),
            })
        } else {
            let prefill = w.prefill.or(p.map(|p| p.prefill));
            let decode = w.decode.or(p.map(|p| p.decode));
            if (prefill.is_none() || decode.is_none()) && w.preset.is_none() {
                errs.push(FieldError::new(
                    "workload",
                    "no workload source: set preset, prefill and decode, or trace",
                ));
            }
            if w.trace_layer.is_some() {
                errs.push(FieldError::new("workload.trace_layer", "only meaningful with workload.trace"));
            }
            match (shape, prefill, decode) {
                (Some(shape), Some(prefill), Some(decode)) => Some(WorkloadSource::Synthetic(WorkloadSpec {
                    shape,
                    prefill,
                    decode,
                    batch: w.batch.or(p.map(|p| p.batch)).unwrap_or(1),
                    skew: w.skew.unwrap_or(DEFAULT_SKEW),
                    head_correlation: w.head_correlation.unwrap_or(DEFAULT_HEAD_CORRELATION),
                    seed: w.seed.unwrap_or(0),
                })),
                _ => None,
            }
        };

        let n_prime = self.aerp.n_prime.or(p.map(|p| p.n_prime));
        if n_prime.is_none() && w.preset.is_none() {
            errs.push(FieldError::new("aerp.n_prime", "required when no preset is given"));
        }
        let budget = n_prime.map(|n| CacheBudget {
            n_prime: n,
            sink_count: self.aerp.sink_count.or(p.map(|p| p.sink_count)).unwrap_or(DEFAULT_SINKS.min(n / 4)),
            recent_window: self.aerp.recent_window.or(p.map(|p| p.recent_window)).unwrap_or(n / 2),
        });

        let system = kind.map(|k| self.system_config(k, &mut errs));

        if let (Some(system), Some(workload), Some(budget)) = (system, workload, budget) {
            let sc = Scenario {
                system,
                tech: self.tech,
                workload,
                budget,
                seed: self.run.seed.unwrap_or(0),
            };
            errs.extend(sc.field_errors());
            if errs.is_empty() {
                return Ok(sc);
            }
        }
        errs.dedup();
        Err(Error::InvalidConfig(errs))
    }

    fn shape(&self, errs: &mut Vec<FieldError>) -> Option<ModelShape> {
        let d = ModelShape::llama2_7b();
        let m = &self.model;
        let channels = m.channels.unwrap_or(d.channels);
        let ffn = m.ffn_dim.unwrap_or(if m.channels.is_some() { default_ffn_dim(channels) } else { d.ffn_dim });
        match ModelShape::with_ffn(channels, m.heads.unwrap_or(d.heads), m.layers.unwrap_or(d.layers), ffn) {
            Ok(s) => Some(s),
            Err(e) => {
                errs.push(FieldError::new("model", e.to_string()));
                None
            }
        }
    }

    fn system_config(&self, kind: SystemKind, errs: &mut Vec<FieldError>) -> SystemConfig {
        let mut s = SystemConfig::preset(kind);
        let o = &self.system;
        s.rsa = RsaConfig {
            rows: o.rsa_rows.unwrap_or(s.rsa.rows),
            cols: o.rsa_cols.unwrap_or(s.rsa.cols),
            clock_hz: o.clock_hz.unwrap_or(s.rsa.clock_hz),
        };
        s.weight_sram_bytes = o.weight_sram_bytes.unwrap_or(s.weight_sram_bytes);
        s.kv_bytes = o.kv_bytes.unwrap_or(s.kv_bytes);
        if s.refresh.is_some() {
            s.activation_edram_bytes = o.activation_edram_bytes.unwrap_or(s.activation_edram_bytes);
            if let Some(r) = &self.refresh {
                match refresh_policy(r) {
                    Ok(p) => s.refresh = Some(p),
                    Err(e) => errs.push(e),
                }
            }
        }
        s
    }
}

fn refresh_policy(r: &RefreshSection) -> std::result::Result<RefreshPolicy, FieldError> {
    let kind = r.kind.as_deref().unwrap_or(if r.interval_s.is_some() { "uniform" } else { "two_dim" });
    match kind {
        "uniform" => {
            let t = r
                .interval_s
                .ok_or_else(|| FieldError::new("refresh.interval_s", "required for uniform refresh"))?;
            if !(t > 0.0) || !t.is_finite() {
                return Err(FieldError::new("refresh.interval_s", format!("must be positive, got {t}")));
            }
            Ok(RefreshPolicy::Uniform { interval_s: t })
        }
        "two_dim" => {
            let [a, b, c, d] = match r.intervals_s {
                Some(v) => v,
                None => RefreshPolicy::two_dim_default().intervals(),
            };
            let p = RefreshPolicy::TwoDim {
                msb_hst_s: a,
                lsb_hst_s: b,
                msb_lst_s: c,
                lsb_lst_s: d,
            };
            p.validate().map_err(|e| FieldError::new("refresh.intervals_s", e.to_string()))?;
            Ok(p)
        }
        other => Err(FieldError::new(
            "refresh.kind",
            format!("expected \"uniform\" or \"two_dim\", got {other:?}"),
        )),
    }
}
