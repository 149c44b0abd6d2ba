use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{Counters, Energy, Latency, LifetimeReport, RunReport, SCHEMA_VERSION};
use super::{lifetime_baseline, lifetime_kelle, SystemConfig, TechParams};
use crate::aerp::{bytes_input_vector, AerpCache, CacheBudget, RecomputeOptions, StorageFormat, TokenId};
use crate::edram::{RefreshController, RetentionModel, anchors};
use crate::error::{Error, FieldError, Result};
use crate::primitives::{ModelShape, SimRng};
use crate::workload::{load_trace, prefill_cache, replay_step, step_groups, TraceRecord, Workload, WorkloadSpec};

const FLIP_STREAM: u64 = 0xF11B;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSource {
    Synthetic(WorkloadSpec),
    /// Decode steps replayed from a trace file; there is no prefill. Every
    /// sequence of the batch follows the recorded layer.
    Trace {
        path: String,
        shape: ModelShape,
        batch: usize,
        layer: usize,
    },
}

impl WorkloadSource {
    pub fn shape(&self) -> &ModelShape {
        match self {
            WorkloadSource::Synthetic(s) => &s.shape,
            WorkloadSource::Trace { shape, .. } => shape,
        }
    }

    pub fn batch(&self) -> usize {
        match self {
            WorkloadSource::Synthetic(s) => s.batch,
            WorkloadSource::Trace { batch, .. } => *batch,
        }
    }
}

/// Everything a run depends on. Two runs of equal scenarios produce
/// byte-identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub system: SystemConfig,
    pub tech: TechParams,
    pub workload: WorkloadSource,
    pub budget: CacheBudget,
    /// Seed of the retention-failure draws. The synthetic workload has its own.
    pub seed: u64,
}

impl Scenario {
    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut e = self.tech.field_errors();
        e.extend(self.system.field_errors());
        if let Err(err) = self.budget.validate() {
            e.push(FieldError::new("aerp.n_prime", err.to_string()));
        }
        match &self.workload {
            WorkloadSource::Synthetic(spec) => {
                if let Err(err) = spec.validate() {
                    e.push(FieldError::new("workload", err.to_string()));
                }
            }
            WorkloadSource::Trace { shape, batch, path, .. } => {
                if let Err(err) = shape.validate() {
                    e.push(FieldError::new("model", err.to_string()));
                }
                if *batch == 0 {
                    e.push(FieldError::new("workload.batch", "must be >= 1"));
                }
                if path.is_empty() {
                    e.push(FieldError::new("workload.trace", "path is empty"));
                }
            }
        }
        e
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.field_errors();
        if e.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(e))
        }
    }

    pub fn config_hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

/// Input-vector tokens per layer and sequence whose recomputation fits in
/// the compute slack left while the weights stream from DRAM.
pub fn recompute_cap(system: &SystemConfig, shape: &ModelShape, batch: usize, tech: &TechParams) -> usize {
    let top = system.rsa.top();
    let weights = (shape.layers as u64 * shape.layer_weight_bytes()) as f64;
    let t_linear = 2.0 * weights * batch as f64 / top;
    let t_weights = weights / tech.dram.bandwidth_bytes_per_s;
    let slack_ops = (t_weights - t_linear).max(0.0) * top;
    let c = shape.channels as f64;
    let per_token = 4.0 * c * c * (shape.layers * batch) as f64;
    (slack_ops / per_token).floor() as usize
}

#[derive(Debug, Clone, Copy, Default)]
struct PhaseCost {
    ops: f64,
    dram_bytes: u64,
    /// Bytes streamed into the array from the KV memory, reads plus writes.
    kv_traffic: u64,
    /// KV memory accesses charged for energy, including staging of spills.
    kv_access: u64,
    /// KV bytes held on chip across the phase.
    persistent: u64,
    /// Fraction of persistent data in the high-score class.
    hst: f64,
}

struct Meter<'a> {
    sc: &'a Scenario,
    weights: u64,
    top: f64,
    p_rsa: f64,
    p_leak: f64,
    controller: Option<RefreshController>,
    flip_p: [f64; 4],
    lambda: [f64; 4],
    now_s: f64,
    energy: Energy,
    latency: Latency,
    counters: Counters,
}

impl<'a> Meter<'a> {
    fn new(sc: &'a Scenario, weights: u64) -> Result<Self> {
        let (controller, flip_p) = match &sc.system.refresh {
            Some(policy) => {
                let model = if sc.tech.edram.retention_s == anchors::SAFE_INTERVAL_S {
                    RetentionModel::fitted_default()
                } else {
                    RetentionModel::fit_group_mean(
                        sc.tech.edram.retention_s,
                        anchors::SAFE_RATE,
                        &anchors::GROUP_INTERVALS_S,
                        anchors::MEAN_GROUP_RATE,
                    )?
                };
                let intervals = policy.intervals();
                (
                    Some(RefreshController::new(policy, &model)?),
                    std::array::from_fn(|g| model.failure_rate(intervals[g])),
                )
            }
            None => (None, [0.0; 4]),
        };
        Ok(Self {
            sc,
            weights,
            top: sc.system.rsa.top(),
            p_rsa: sc.system.rsa_power_w(&sc.tech),
            p_leak: sc.system.leakage_w(&sc.tech),
            controller,
            flip_p,
            lambda: [0.0; 4],
            now_s: 0.0,
            energy: Energy::default(),
            latency: Latency::default(),
            counters: Counters::default(),
        })
    }

    fn phase(&mut self, c: &PhaseCost) -> Result<f64> {
        let tech = &self.sc.tech;
        let sys = &self.sc.system;
        let w = self.weights as f64;
        let t_c = c.ops / self.top;
        let t_dram = (w + c.dram_bytes as f64) / tech.dram.bandwidth_bytes_per_s;
        let t_w = w / tech.sram.bandwidth_bytes_per_s;
        let t_kv = c.kv_traffic as f64 / sys.kv_bandwidth(tech);
        let on_chip = if sys.kind.kelle_schedule() { t_w.max(t_kv) } else { t_w + t_kv };
        let lat = t_c.max(t_dram).max(on_chip);

        self.latency.compute += t_c;
        self.latency.dram += t_dram;
        self.latency.on_chip += on_chip;
        self.latency.total += lat;

        if c.ops > 0.0 {
            self.energy.compute += self.p_rsa * lat;
        }
        // staged into SRAM, then read by the array
        self.energy.weights += 2.0 * w * tech.sram.access_pj_per_byte * 1e-12;
        self.energy.kv_cache += c.kv_access as f64 * sys.kv_access_pj(tech) * 1e-12;
        self.energy.dram += (w + c.dram_bytes as f64) * tech.dram.access_pj_per_byte * 1e-12;
        self.energy.leakage += self.p_leak * lat;

        self.counters.dram_bytes += self.weights + c.dram_bytes;
        self.counters.weight_bytes += self.weights;
        self.counters.kv_onchip_bytes += c.kv_access;

        self.now_s += lat;
        if let Some(ctrl) = self.controller.as_mut() {
            let hst = (c.persistent as f64 * c.hst).round() as u64;
            let lst = c.persistent - hst.min(c.persistent);
            let bytes = [hst / 2, hst - hst / 2, lst / 2, lst - lst / 2];
            let now_ns = (self.now_s * 1e9).round() as u64;
            let (fired, e) = ctrl.advance(now_ns.max(ctrl.now_ns()), &bytes, tech.refresh_j_per_byte())?;
            self.energy.refresh += e;
            for g in 0..4 {
                self.lambda[g] += fired[g] as f64 * bytes[g] as f64 * 8.0 * self.flip_p[g];
            }
        }
        Ok(lat)
    }
}

/// Lower-median split over all resident (token, head) scores: the fraction
/// strictly above the lower median.
fn hst_fraction(cache: &AerpCache, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    for h in 0..cache.heads() {
        buf.extend_from_slice(cache.head_scores(h));
    }
    if buf.is_empty() {
        return 0.5;
    }
    let k = (buf.len() - 1) / 2;
    let (_, m, _) = buf.select_nth_unstable_by(k, f64::total_cmp);
    let m = *m;
    buf.iter().filter(|&&s| s > m).count() as f64 / buf.len() as f64
}

enum Driver<'r> {
    Full,
    Synthetic { workload: Workload, cache: AerpCache, rows: Vec<Vec<f64>> },
    Trace { groups: Vec<Vec<(usize, &'r TraceRecord)>>, cache: AerpCache },
}

struct StepState {
    pairs: u64,
    footprint: u64,
    iv: u64,
    hst: f64,
}

/// Run one scenario through the cost model.
pub fn run_config(sc: &Scenario) -> Result<RunReport> {
    sc.validate()?;
    let records = match &sc.workload {
        WorkloadSource::Trace { path, .. } => load_trace(path)?,
        WorkloadSource::Synthetic(_) => Vec::new(),
    };
    run_with_records(sc, &records)
}

pub(crate) fn run_with_records(sc: &Scenario, records: &[TraceRecord]) -> Result<RunReport> {
    sc.validate()?;
    let shape = *sc.workload.shape();
    let batch = sc.workload.batch() as u64;
    let kind = sc.system.kind;
    let layers = shape.layers as u64;
    let c = shape.channels as u64;
    let heads = shape.heads as u64;
    let hd = shape.head_dim() as u64;
    let scale = layers * batch;
    let weights = layers * shape.layer_weight_bytes();
    let kv_token = 4 * c;
    let iv_token = bytes_input_vector(&shape);

    let cap = if kind.recomputation() {
        recompute_cap(&sc.system, &shape, batch as usize, &sc.tech)
    } else {
        0
    };
    let recompute = if kind.recomputation() {
        RecomputeOptions::capped(cap)
    } else {
        RecomputeOptions::OFF
    };

    let (prefill, decode, mut driver) = match &sc.workload {
        WorkloadSource::Synthetic(spec) => {
            let driver = if kind.eviction() {
                let workload = Workload::new(*spec)?;
                let cache = prefill_cache(&workload, sc.budget, recompute)?;
                Driver::Synthetic {
                    workload,
                    cache,
                    rows: vec![Vec::new(); shape.heads],
                }
            } else {
                Driver::Full
            };
            (spec.prefill, spec.decode, driver)
        }
        WorkloadSource::Trace { layer, .. } => {
            let groups = step_groups(records, *layer);
            let n = groups.len();
            let driver = if kind.eviction() {
                Driver::Trace {
                    groups,
                    cache: AerpCache::new(shape.heads, sc.budget, recompute)?,
                }
            } else {
                Driver::Full
            };
            (0, n, driver)
        }
    };

    let total_tokens = (prefill + decode) as u64;
    let per_layer_bound = if kind.eviction() {
        total_tokens.min(sc.budget.n_prime as u64) * kv_token + cap as u64 * iv_token
    } else {
        total_tokens * kv_token
    };
    let required = weights + scale * per_layer_bound;
    if required > sc.tech.dram.capacity_bytes {
        return Err(Error::Capacity {
            required,
            available: sc.tech.dram.capacity_bytes,
        });
    }

    let kv_cap = sc.system.kv_bytes;
    let two_dim = matches!(sc.system.refresh, Some(p) if p.intervals()[0] != p.intervals()[2]);
    let mut meter = Meter::new(sc, weights)?;
    let mut score_buf = Vec::new();

    // prefill
    let n = prefill as u64;
    let kept = match &driver {
        Driver::Synthetic { cache, .. } => cache.footprint_bytes(&shape),
        _ => n * kv_token,
    };
    let kept_all = kept * scale;
    let ops = batch as f64
        * (2.0 * weights as f64 * n as f64 + layers as f64 * 4.0 * c as f64 * (n * (n + 1) / 2) as f64);
    let resident_after = kept_all.min(kv_cap);
    meter.latency.prefill = meter.phase(&PhaseCost {
        ops,
        dram_bytes: kept_all - resident_after,
        kv_traffic: kept_all,
        kv_access: kept_all,
        persistent: 0,
        hst: 0.5,
    })?;
    meter.counters.peak_kv_bytes = kept_all;

    let mut kv_read_sum = 0u64;
    for i in 0..decode {
        let t = (prefill + i) as TokenId;
        let state = match &driver {
            Driver::Full => StepState {
                pairs: heads * t as u64,
                footprint: t as u64 * kv_token,
                iv: 0,
                hst: 0.5,
            },
            Driver::Synthetic { cache, .. } | Driver::Trace { cache, .. } => StepState {
                pairs: cache.resident_pairs() as u64,
                footprint: cache.footprint_bytes(&shape),
                iv: cache.input_vector_tokens() as u64,
                hst: if two_dim { hst_fraction(cache, &mut score_buf) } else { 0.5 },
            },
        };
        let new_bytes = match &mut driver {
            Driver::Full => kv_token,
            Driver::Synthetic { workload, cache, rows } => {
                for (h, row) in rows.iter_mut().enumerate() {
                    workload.decode_row_into(h, cache.resident_ids(h), t, row);
                }
                cache.decode_step(t, rows)?;
                new_token_bytes(cache, t, kv_token, iv_token)
            }
            Driver::Trace { groups, cache } => {
                replay_step(cache, &groups[i])?;
                let t = *groups[i][0].1.ids.last().expect("validated");
                new_token_bytes(cache, t, kv_token, iv_token)
            }
        };
        let f_all = state.footprint * scale;
        let new_all = new_bytes * scale;
        let persistent = f_all.min(kv_cap);
        let spilled = f_all - persistent;
        let write_back = if f_all + new_all > kv_cap { new_all } else { 0 };
        let cc = c as f64;
        let ops = batch as f64
            * (2.0 * weights as f64
                + layers as f64 * (4.0 * hd as f64 * (state.pairs + heads) as f64 + state.iv as f64 * 4.0 * cc * cc));
        let lat = meter.phase(&PhaseCost {
            ops,
            dram_bytes: spilled + write_back,
            kv_traffic: f_all + new_all,
            kv_access: f_all + spilled + new_all,
            persistent,
            hst: state.hst,
        })?;
        meter.latency.decode += lat;
        meter.counters.peak_kv_bytes = meter.counters.peak_kv_bytes.max(f_all + new_all);
        kv_read_sum += state.footprint;
    }

    let stats = match &driver {
        Driver::Full => Default::default(),
        Driver::Synthetic { cache, .. } | Driver::Trace { cache, .. } => *cache.stats(),
    };
    let Meter {
        mut energy,
        latency,
        mut counters,
        controller,
        lambda,
        ..
    } = meter;
    energy.total = energy.category_sum();
    counters.decode_steps = decode as u64;
    counters.evictions = stats.evictions * scale;
    counters.recomputations = stats.recomputations * scale;
    counters.admitted_kv_split = stats.admitted_kv_split * scale;
    counters.admitted_input_vector = stats.admitted_input_vector * scale;
    counters.frozen_format_drops = stats.frozen_format_drops * scale;
    counters.recompute_cap = cap as u64;
    if let Some(ctrl) = &controller {
        counters.refresh_passes = ctrl.passes();
    }
    let rng = SimRng::new(sc.seed);
    for g in 0..4 {
        if lambda[g] > 0.0 {
            let mut s = rng.stream(&[FLIP_STREAM, g as u64]);
            let d = Poisson::new(lambda[g]).map_err(|e| Error::Config(e.to_string()))?;
            counters.flips[g] = d.sample(&mut s) as u64;
        }
    }
    counters.flips_total = counters.flips.iter().sum();

    let t_sram = c as f64 * c as f64 / sc.tech.sram.bandwidth_bytes_per_s;
    let t_kv = if decode > 0 {
        kv_read_sum as f64 / decode as f64 / sc.system.kv_bandwidth(&sc.tech)
    } else {
        0.0
    };
    let baseline = lifetime_baseline(t_sram, t_kv);
    let kelle = lifetime_kelle(t_sram, t_kv);
    let lifetime = LifetimeReport {
        t_sram,
        t_edram: t_kv,
        baseline,
        kelle,
        scheduled_total: if kind.kelle_schedule() { kelle.total } else { baseline.total },
    };

    Ok(RunReport {
        schema_version: SCHEMA_VERSION.to_string(),
        config_hash: sc.config_hash()?,
        system: kind.name().to_string(),
        label: kind.label().to_string(),
        seed: sc.seed,
        scenario: sc.clone(),
        latency,
        refresh_share_on_chip: energy.refresh_share(),
        energy,
        counters,
        lifetime,
    })
}

fn new_token_bytes(cache: &AerpCache, t: TokenId, kv_token: u64, iv_token: u64) -> u64 {
    match cache.format(t) {
        Some(StorageFormat::InputVector) => iv_token,
        _ => kv_token,
    }
}
