//! Analytical latency, energy and data-lifetime model, and the five system
//! configurations it compares.

mod report;
mod run;

pub use report::{report_diff, CategoryDiff, Counters, Energy, Latency, LifetimeReport, ReportDiff, RunReport, SCHEMA_VERSION};
pub use run::{recompute_cap, run_config, Scenario, WorkloadSource};

use serde::{Deserialize, Serialize};

use crate::edram::RefreshPolicy;
use crate::error::{config_err, Error, FieldError, Result};
use crate::microarch::RsaConfig;

pub const MIB: u64 = 1 << 20;
const FOUR_MIB: f64 = (4 * MIB) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SramTech {
    pub access_pj_per_byte: f64,
    /// Leakage of a 4 MiB array; scaled linearly with capacity.
    pub leakage_w_per_4mib: f64,
    pub bandwidth_bytes_per_s: f64,
}

impl Default for SramTech {
    fn default() -> Self {
        Self {
            access_pj_per_byte: 185.9,
            leakage_w_per_4mib: 0.415,
            bandwidth_bytes_per_s: 128e9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdramTech {
    pub access_pj_per_byte: f64,
    pub leakage_w_per_4mib: f64,
    /// Energy of one refresh pass over a full 4 MiB array.
    pub refresh_mj_per_4mib_pass: f64,
    /// Interval at which refresh is failure-free for practical purposes.
    pub retention_s: f64,
    pub bandwidth_bytes_per_s: f64,
}

impl Default for EdramTech {
    fn default() -> Self {
        Self {
            access_pj_per_byte: 84.8,
            leakage_w_per_4mib: 0.154,
            refresh_mj_per_4mib_pass: 1.14,
            retention_s: 45e-6,
            bandwidth_bytes_per_s: 256e9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DramTech {
    pub bandwidth_bytes_per_s: f64,
    /// Not a measured figure; an LPDDR4-class placeholder.
    pub access_pj_per_byte: f64,
    pub capacity_bytes: u64,
}

impl Default for DramTech {
    fn default() -> Self {
        Self {
            bandwidth_bytes_per_s: 64e9,
            access_pj_per_byte: 40.0,
            capacity_bytes: 16 << 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TechParams {
    pub sram: SramTech,
    pub edram: EdramTech,
    pub dram: DramTech,
    pub rsa: RsaTech,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsaTech {
    /// Array power at 1 GHz per 1024 PEs, drawn while a phase is computing.
    /// Not a measured figure.
    pub watts_per_1024_pes: f64,
}

impl Default for RsaTech {
    fn default() -> Self {
        Self { watts_per_1024_pes: 1.1 }
    }
}

fn positive(errs: &mut Vec<FieldError>, field: &str, v: f64) {
    if !(v > 0.0) || !v.is_finite() {
        errs.push(FieldError::new(field, format!("must be positive and finite, got {v}")));
    }
}

impl TechParams {
    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut e = Vec::new();
        positive(&mut e, "tech.sram.access_pj_per_byte", self.sram.access_pj_per_byte);
        positive(&mut e, "tech.sram.leakage_w_per_4mib", self.sram.leakage_w_per_4mib);
        positive(&mut e, "tech.sram.bandwidth_bytes_per_s", self.sram.bandwidth_bytes_per_s);
        positive(&mut e, "tech.edram.access_pj_per_byte", self.edram.access_pj_per_byte);
        positive(&mut e, "tech.edram.leakage_w_per_4mib", self.edram.leakage_w_per_4mib);
        positive(&mut e, "tech.edram.refresh_mj_per_4mib_pass", self.edram.refresh_mj_per_4mib_pass);
        positive(&mut e, "tech.edram.retention_s", self.edram.retention_s);
        positive(&mut e, "tech.edram.bandwidth_bytes_per_s", self.edram.bandwidth_bytes_per_s);
        positive(&mut e, "tech.dram.bandwidth_bytes_per_s", self.dram.bandwidth_bytes_per_s);
        positive(&mut e, "tech.dram.access_pj_per_byte", self.dram.access_pj_per_byte);
        positive(&mut e, "tech.rsa.watts_per_1024_pes", self.rsa.watts_per_1024_pes);
        if self.dram.capacity_bytes == 0 {
            e.push(FieldError::new("tech.dram.capacity_bytes", "must be positive"));
        }
        if self.edram.access_pj_per_byte >= self.sram.access_pj_per_byte {
            e.push(FieldError::new(
                "tech.edram.access_pj_per_byte",
                "eDRAM access energy must be below SRAM access energy",
            ));
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

    pub fn refresh_j_per_byte(&self) -> f64 {
        self.edram.refresh_mj_per_4mib_pass * 1e-3 / FOUR_MIB
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    OriginalSram,
    OriginalEdram,
    AepSram,
    AerpSram,
    KelleEdram,
}

impl SystemKind {
    pub const ALL: [SystemKind; 5] = [
        SystemKind::OriginalSram,
        SystemKind::OriginalEdram,
        SystemKind::AepSram,
        SystemKind::AerpSram,
        SystemKind::KelleEdram,
    ];

    /// The four systems of the efficiency ladder, worst first.
    pub const LADDER: [SystemKind; 4] = [
        SystemKind::OriginalSram,
        SystemKind::AepSram,
        SystemKind::AerpSram,
        SystemKind::KelleEdram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::OriginalSram => "original-sram",
            SystemKind::OriginalEdram => "original-edram",
            SystemKind::AepSram => "aep-sram",
            SystemKind::AerpSram => "aerp-sram",
            SystemKind::KelleEdram => "kelle-edram",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SystemKind::OriginalSram => "Original+SRAM",
            SystemKind::OriginalEdram => "Original+eDRAM",
            SystemKind::AepSram => "AEP+SRAM",
            SystemKind::AerpSram => "AERP+SRAM",
            SystemKind::KelleEdram => "Kelle+eDRAM",
        }
    }

    /// Accepts either the kebab-case name or the label, case-insensitively.
    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s) || k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                config_err(format!("unknown system {s:?}; expected one of {}", names.join(", ")))
            })
    }

    pub fn eviction(self) -> bool {
        !matches!(self, SystemKind::OriginalSram | SystemKind::OriginalEdram)
    }

    pub fn recomputation(self) -> bool {
        matches!(self, SystemKind::AerpSram | SystemKind::KelleEdram)
    }

    pub fn kelle_schedule(self) -> bool {
        self == SystemKind::KelleEdram
    }

    pub fn kv_memory(self) -> Memory {
        match self {
            SystemKind::OriginalEdram | SystemKind::KelleEdram => Memory::Edram,
            _ => Memory::Sram,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Memory {
    Sram,
    Edram,
}

/// Hardware and policy of one compared system. Policy toggles are fixed by
/// `kind`; sizes and the refresh policy may be overridden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    pub rsa: RsaConfig,
    pub weight_sram_bytes: u64,
    /// On-chip KV capacity, in the memory given by `kind.kv_memory()`.
    pub kv_bytes: u64,
    pub activation_edram_bytes: u64,
    /// `None` exactly for SRAM-only systems.
    pub refresh: Option<RefreshPolicy>,
}

impl SystemConfig {
    pub fn preset(kind: SystemKind) -> Self {
        match kind.kv_memory() {
            // Same area as the eDRAM design: a smaller array and 4 MiB of SRAM.
            Memory::Sram => Self {
                kind,
                rsa: RsaConfig::new(24, 24, 1e9).expect("valid"),
                weight_sram_bytes: 2 * MIB,
                kv_bytes: 2 * MIB,
                activation_edram_bytes: 0,
                refresh: None,
            },
            Memory::Edram => Self {
                kind,
                rsa: RsaConfig::default(),
                weight_sram_bytes: 2 * MIB,
                kv_bytes: 4 * MIB,
                activation_edram_bytes: 256 * 1024,
                refresh: Some(if kind == SystemKind::KelleEdram {
                    RefreshPolicy::two_dim_default()
                } else {
                    RefreshPolicy::UNIFORM_SAFE
                }),
            },
        }
    }

    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut e = Vec::new();
        if self.rsa.rows == 0 || self.rsa.cols == 0 || !(self.rsa.clock_hz > 0.0) {
            e.push(FieldError::new("system.rsa", "rows, cols and clock_hz must be positive"));
        }
        if self.weight_sram_bytes == 0 {
            e.push(FieldError::new("system.weight_sram_bytes", "must be positive"));
        }
        match (self.kind.kv_memory(), &self.refresh) {
            (Memory::Sram, Some(_)) => e.push(FieldError::new(
                "system.refresh",
                format!("{} has no eDRAM to refresh", self.kind.label()),
            )),
            (Memory::Sram, None) => {
                if self.activation_edram_bytes != 0 {
                    e.push(FieldError::new("system.activation_edram_bytes", "SRAM systems have no eDRAM"));
                }
            }
            (Memory::Edram, None) => e.push(FieldError::new("system.refresh", "eDRAM systems need a refresh policy")),
            (Memory::Edram, Some(p)) => {
                if let Err(err) = p.validate() {
                    e.push(FieldError::new("system.refresh", err.to_string()));
                }
            }
        }
        e
    }

    pub fn sram_bytes(&self) -> u64 {
        self.weight_sram_bytes
            + match self.kind.kv_memory() {
                Memory::Sram => self.kv_bytes,
                Memory::Edram => 0,
            }
    }

    pub fn edram_bytes(&self) -> u64 {
        self.activation_edram_bytes
            + match self.kind.kv_memory() {
                Memory::Sram => 0,
                Memory::Edram => self.kv_bytes,
            }
    }

    pub fn leakage_w(&self, tech: &TechParams) -> f64 {
        tech.sram.leakage_w_per_4mib * self.sram_bytes() as f64 / FOUR_MIB
            + tech.edram.leakage_w_per_4mib * self.edram_bytes() as f64 / FOUR_MIB
    }

    pub fn rsa_power_w(&self, tech: &TechParams) -> f64 {
        tech.rsa.watts_per_1024_pes * self.rsa.pes() as f64 / 1024.0 * self.rsa.clock_hz / 1e9
    }

    pub fn kv_access_pj(&self, tech: &TechParams) -> f64 {
        match self.kind.kv_memory() {
            Memory::Sram => tech.sram.access_pj_per_byte,
            Memory::Edram => tech.edram.access_pj_per_byte,
        }
    }

    pub fn kv_bandwidth(&self, tech: &TechParams) -> f64 {
        match self.kind.kv_memory() {
            Memory::Sram => tech.sram.bandwidth_bytes_per_s,
            Memory::Edram => tech.edram.bandwidth_bytes_per_s,
        }
    }
}

/// Seconds for `ops` operations at the array's peak throughput.
pub fn t_mm(ops: f64, top_rsa: f64) -> Result<f64> {
    if !(top_rsa > 0.0) {
        return Err(config_err("array throughput must be positive"));
    }
    Ok(ops / top_rsa)
}

pub fn t_edram(s_kv_bytes: f64, b_edram: f64) -> Result<f64> {
    if !(b_edram > 0.0) {
        return Err(config_err("eDRAM bandwidth must be positive"));
    }
    Ok(s_kv_bytes / b_edram)
}

pub fn t_sram(s_w_bytes: f64, b_sram: f64) -> Result<f64> {
    if !(b_sram > 0.0) {
        return Err(config_err("SRAM bandwidth must be positive"));
    }
    Ok(s_w_bytes / b_sram)
}

/// Lifetime of each self-attention intermediate between production and use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lifetimes {
    pub x: f64,
    pub q: f64,
    pub k: f64,
    pub v: f64,
    pub total: f64,
}

/// Q, K and V projections and both cache reads run one after another.
pub fn lifetime_baseline(t_sram: f64, t_edram: f64) -> Lifetimes {
    let x = 3.0 * t_sram;
    let q = 2.0 * t_sram + t_edram;
    let k = t_sram + t_edram;
    let v = 2.0 * t_edram;
    Lifetimes {
        x,
        q,
        k,
        v,
        total: 6.0 * t_sram + 4.0 * t_edram,
    }
}

/// Weight and cache reads overlap; new K and V are consumed as produced.
pub fn lifetime_kelle(t_sram: f64, t_edram: f64) -> Lifetimes {
    let x = 3.0 * t_sram;
    let q = t_sram + t_edram;
    Lifetimes {
        x,
        q,
        k: 0.0,
        v: 0.0,
        total: 4.0 * t_sram + t_edram,
    }
}

/// Fetching `vectors` KV vectors when a share of them is rebuilt on the array
/// instead of loaded from DRAM. Loads and recomputes overlap; `residue_s` is
/// the part that cannot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecomputeTradeoff {
    pub vectors: usize,
    pub load_s: f64,
    pub recompute_s: f64,
    pub residue_s: f64,
}

impl RecomputeTradeoff {
    /// Latency with `round(alpha * vectors)` vectors recomputed.
    pub fn latency(&self, alpha: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(config_err(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let recomputed = (alpha * self.vectors as f64).round() as usize;
        Ok(self.latency_split(self.vectors - recomputed, recomputed))
    }

    pub fn latency_split(&self, loaded: usize, recomputed: usize) -> f64 {
        let load = loaded as f64 * self.load_s;
        let rc = recomputed as f64 * self.recompute_s;
        load.max(rc) + self.residue_s
    }

    /// Number of recomputed vectors that minimizes latency (fewest on ties).
    pub fn best_split(&self) -> usize {
        (0..=self.vectors)
            .min_by(|&a, &b| {
                self.latency_split(self.vectors - a, a)
                    .total_cmp(&self.latency_split(self.vectors - b, b))
            })
            .unwrap_or(0)
    }
}

pub fn recompute_tradeoff(alpha: f64, vectors: usize, load_s: f64, recompute_s: f64) -> Result<f64> {
    RecomputeTradeoff {
        vectors,
        load_s,
        recompute_s,
        residue_s: 0.0,
    }
    .latency(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_defaults_validate() {
        let t = TechParams::default();
        t.validate().unwrap();
        let mut bad = t;
        bad.edram.access_pj_per_byte = 200.0;
        bad.dram.bandwidth_bytes_per_s = -1.0;
        match bad.validate() {
            Err(Error::InvalidConfig(f)) => {
                let fields: Vec<&str> = f.iter().map(|e| e.field.as_str()).collect();
                assert_eq!(fields, ["tech.dram.bandwidth_bytes_per_s", "tech.edram.access_pj_per_byte"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn transfer_times() {
        assert_eq!(t_edram(0.0, 256e9).unwrap(), 0.0);
        assert!((t_edram(256.0, 256e9).unwrap() - 1e-9).abs() < 1e-21);
        assert!(t_edram(1.0, 0.0).is_err());
        assert_eq!(t_sram(0.0, 128e9).unwrap(), 0.0);
        assert!((t_sram(128.0, 128e9).unwrap() - 1e-9).abs() < 1e-21);
        assert!(t_sram(1.0, 0.0).is_err());
        assert!(t_mm(1.0, 0.0).is_err());
    }

    #[test]
    fn per_token_kv_transfer() {
        // K and V, 4096 channels, two bytes each
        let bytes = 2.0 * 4096.0 * 2.0;
        assert_eq!(bytes, 16384.0);
        assert!((t_edram(bytes, 256e9).unwrap() - 64e-9).abs() < 1e-18);
        assert!((t_sram(bytes, 128e9).unwrap() - 128e-9).abs() < 1e-18);
    }

    #[test]
    fn lifetime_corners() {
        assert_eq!(lifetime_baseline(1.0, 0.0).total, 6.0);
        assert_eq!(lifetime_baseline(0.0, 1.0).total, 4.0);
        assert_eq!(lifetime_kelle(1.0, 0.0).total, 4.0);
        assert_eq!(lifetime_kelle(0.0, 1.0).total, 1.0);
        let b = lifetime_baseline(2.0, 3.0);
        assert_eq!(b.x + b.q + b.k + b.v, b.total);
    }

    #[test]
    fn overlap_example() {
        assert!((recompute_tradeoff(0.0, 4, 1.1e-6, 3.2e-6).unwrap() - 4.4e-6).abs() < 1e-15);
        assert!((recompute_tradeoff(0.25, 4, 1.1e-6, 3.2e-6).unwrap() - 3.3e-6).abs() < 1e-15);
        assert!(recompute_tradeoff(1.5, 4, 1.1e-6, 3.2e-6).is_err());
    }

    #[test]
    fn system_toggles() {
        use SystemKind::*;
        let table = [
            (OriginalSram, false, false, false),
            (OriginalEdram, false, false, false),
            (AepSram, true, false, false),
            (AerpSram, true, true, false),
            (KelleEdram, true, true, true),
        ];
        for (k, ev, rc, ks) in table {
            assert_eq!((k.eviction(), k.recomputation(), k.kelle_schedule()), (ev, rc, ks), "{k:?}");
            let s = SystemConfig::preset(k);
            assert!(s.field_errors().is_empty());
            assert_eq!(SystemKind::parse(k.name()).unwrap(), k);
            assert_eq!(SystemKind::parse(k.label()).unwrap(), k);
        }
        assert!(matches!(SystemConfig::preset(KelleEdram).refresh, Some(RefreshPolicy::TwoDim { .. })));
        assert_eq!(SystemConfig::preset(OriginalEdram).refresh, Some(RefreshPolicy::UNIFORM_SAFE));
        assert!(SystemKind::parse("gpu").is_err());
        let t = TechParams::default();
        assert!((SystemConfig::preset(OriginalSram).leakage_w(&t) - 0.415).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn lifetime_gap(ts in 0.0f64..1e-3, te in 0.0f64..1e-3) {
            let gap = lifetime_baseline(ts, te).total - lifetime_kelle(ts, te).total;
            prop_assert!((gap - (2.0 * ts + 3.0 * te)).abs() <= 1e-15);
        }

        #[test]
        fn grid_finds_minimum(n in 1usize..40, load in 0.1f64..5.0, rc in 0.1f64..5.0) {
            let t = RecomputeTradeoff { vectors: n, load_s: load, recompute_s: rc, residue_s: 0.0 };
            let best = t.latency_split(n - t.best_split(), t.best_split());
            for r in 0..=n {
                prop_assert!(best <= t.latency_split(n - r, r));
            }
        }
    }
}
