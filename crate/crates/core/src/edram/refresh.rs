use serde::{Deserialize, Serialize};

use super::retention::RetentionModel;
use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceClass {
    /// High-score tokens.
    Hst,
    /// Low-score tokens.
    Lst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitPlane {
    /// Bits 15..8.
    Msb,
    /// Bits 7..0.
    Lsb,
}

impl BitPlane {
    pub const fn shift(self) -> u32 {
        match self {
            BitPlane::Msb => 8,
            BitPlane::Lsb => 0,
        }
    }

    pub const fn index(self) -> usize {
        match self {
            BitPlane::Msb => 0,
            BitPlane::Lsb => 1,
        }
    }
}

/// The four refresh groups, in the order their intervals are listed in
/// configuration: MSB-HST, LSB-HST, MSB-LST, LSB-LST.
pub const GROUP_ORDER: [(ImportanceClass, BitPlane); 4] = [
    (ImportanceClass::Hst, BitPlane::Msb),
    (ImportanceClass::Hst, BitPlane::Lsb),
    (ImportanceClass::Lst, BitPlane::Msb),
    (ImportanceClass::Lst, BitPlane::Lsb),
];

pub fn group_index(class: ImportanceClass, plane: BitPlane) -> usize {
    match class {
        ImportanceClass::Hst => plane.index(),
        ImportanceClass::Lst => 2 + plane.index(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RefreshPolicy {
    /// Every cell on one interval.
    Uniform { interval_s: f64 },
    /// Interval per (importance class, bit plane).
    TwoDim {
        msb_hst_s: f64,
        lsb_hst_s: f64,
        msb_lst_s: f64,
        lsb_lst_s: f64,
    },
}

impl RefreshPolicy {
    pub const UNIFORM_SAFE: RefreshPolicy = RefreshPolicy::Uniform { interval_s: 45e-6 };

    pub fn two_dim_default() -> Self {
        RefreshPolicy::TwoDim {
            msb_hst_s: 0.36e-3,
            lsb_hst_s: 5.4e-3,
            msb_lst_s: 1.44e-3,
            lsb_lst_s: 7.2e-3,
        }
    }

    /// Intervals in `GROUP_ORDER`.
    pub fn intervals(&self) -> [f64; 4] {
        match *self {
            RefreshPolicy::Uniform { interval_s } => [interval_s; 4],
            RefreshPolicy::TwoDim {
                msb_hst_s,
                lsb_hst_s,
                msb_lst_s,
                lsb_lst_s,
            } => [msb_hst_s, lsb_hst_s, msb_lst_s, lsb_lst_s],
        }
    }

    pub fn interval(&self, class: ImportanceClass, plane: BitPlane) -> f64 {
        self.intervals()[group_index(class, plane)]
    }

    /// Refreshes per second averaged over the four groups.
    pub fn mean_rate_hz(&self) -> f64 {
        self.intervals().iter().map(|t| 1.0 / t).sum::<f64>() / 4.0
    }

    /// Positive intervals, MSB refreshed at least as often as LSB within a
    /// class, and HST at least as often as LST within a plane.
    pub fn validate(&self) -> Result<()> {
        let [mh, lh, ml, ll] = self.intervals();
        if [mh, lh, ml, ll].iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(config_err("refresh intervals must be positive and finite"));
        }
        if !(mh <= lh && ml <= ll && mh <= ml && lh <= ll) {
            return Err(config_err(format!(
                "refresh intervals out of order: MSB-HST {mh}, LSB-HST {lh}, MSB-LST {ml}, LSB-LST {ll}"
            )));
        }
        Ok(())
    }
}

impl Default for RefreshPolicy {
    fn default() -> Self {
        Self::two_dim_default()
    }
}

pub(crate) fn seconds_to_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefreshGroup {
    pub class: ImportanceClass,
    pub plane: BitPlane,
    pub interval_s: f64,
    pub next_due_ns: u64,
    /// Failure probability of a cell left for one full interval.
    pub expected_flip_rate: f64,
}

impl RefreshGroup {
    pub fn interval_ns(&self) -> u64 {
        seconds_to_ns(self.interval_s)
    }

    pub fn time_to_next_ns(&self, now_ns: u64) -> u64 {
        self.next_due_ns.saturating_sub(now_ns)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshEvent {
    pub group: usize,
    pub time_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TickOutcome {
    pub events: Vec<RefreshEvent>,
    pub energy_j: f64,
}

/// Countdown per refresh group on a nanosecond timeline starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RefreshController {
    groups: [RefreshGroup; 4],
    now_ns: u64,
    passes: [u64; 4],
}

impl RefreshController {
    pub fn new(policy: &RefreshPolicy, model: &RetentionModel) -> Result<Self> {
        policy.validate()?;
        let intervals = policy.intervals();
        let groups = std::array::from_fn(|g| {
            let (class, plane) = GROUP_ORDER[g];
            RefreshGroup {
                class,
                plane,
                interval_s: intervals[g],
                next_due_ns: seconds_to_ns(intervals[g]),
                expected_flip_rate: model.failure_rate(intervals[g]),
            }
        });
        if groups.iter().any(|g: &RefreshGroup| g.interval_ns() == 0) {
            return Err(config_err("refresh intervals must be at least 1 ns"));
        }
        Ok(Self {
            groups,
            now_ns: 0,
            passes: [0; 4],
        })
    }

    pub fn groups(&self) -> &[RefreshGroup; 4] {
        &self.groups
    }

    pub fn now_ns(&self) -> u64 {
        self.now_ns
    }

    /// Completed refresh passes per group.
    pub fn passes(&self) -> [u64; 4] {
        self.passes
    }

    /// Fire every refresh due at or before `now_ns`, in time order (group
    /// order on ties). `resident_bytes[g]` is what group `g` holds; each pass
    /// costs those bytes at `j_per_byte`.
    pub fn refresh_tick(&mut self, now_ns: u64, resident_bytes: &[u64; 4], j_per_byte: f64) -> Result<TickOutcome> {
        if now_ns < self.now_ns {
            return Err(Error::Protocol(format!(
                "refresh time moved backwards from {} ns to {now_ns} ns",
                self.now_ns
            )));
        }
        let mut out = TickOutcome::default();
        loop {
            let next = (0..4)
                .filter(|&g| self.groups[g].next_due_ns <= now_ns)
                .min_by_key(|&g| (self.groups[g].next_due_ns, g));
            let Some(g) = next else { break };
            let t = self.groups[g].next_due_ns;
            out.events.push(RefreshEvent { group: g, time_ns: t });
            out.energy_j += resident_bytes[g] as f64 * j_per_byte;
            self.passes[g] += 1;
            self.groups[g].next_due_ns = t + self.groups[g].interval_ns();
        }
        self.now_ns = now_ns;
        Ok(out)
    }

    /// Same accounting as `refresh_tick` without listing events. Returns the
    /// passes fired per group and their energy.
    pub fn advance(&mut self, now_ns: u64, resident_bytes: &[u64; 4], j_per_byte: f64) -> Result<([u64; 4], f64)> {
        if now_ns < self.now_ns {
            return Err(Error::Protocol(format!(
                "refresh time moved backwards from {} ns to {now_ns} ns",
                self.now_ns
            )));
        }
        let mut fired = [0u64; 4];
        let mut energy = 0.0;
        for (g, group) in self.groups.iter_mut().enumerate() {
            if group.next_due_ns > now_ns {
                continue;
            }
            let step = group.interval_ns();
            let n = (now_ns - group.next_due_ns) / step + 1;
            group.next_due_ns += n * step;
            fired[g] = n;
            self.passes[g] += n;
            energy += n as f64 * resident_bytes[g] as f64 * j_per_byte;
        }
        self.now_ns = now_ns;
        Ok((fired, energy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn controller(p: RefreshPolicy) -> RefreshController {
        RefreshController::new(&p, &RetentionModel::default()).unwrap()
    }

    #[test]
    fn nothing_due_costs_nothing() {
        let mut c = controller(RefreshPolicy::two_dim_default());
        let out = c.refresh_tick(100_000, &[1000; 4], 1.0).unwrap();
        assert!(out.events.is_empty());
        assert_eq!(out.energy_j, 0.0);
    }

    #[test]
    fn uniform_safe_interval_over_one_ms() {
        let mut c = controller(RefreshPolicy::UNIFORM_SAFE);
        c.refresh_tick(1_000_000, &[0; 4], 1.0).unwrap();
        assert_eq!(c.passes(), [22; 4]);
    }

    #[test]
    fn adaptive_pass_counts_over_36_ms() {
        let mut c = controller(RefreshPolicy::two_dim_default());
        for step in 1..=36 {
            c.refresh_tick(step * 1_000_000, &[0; 4], 1.0).unwrap();
        }
        assert_eq!(c.passes(), [100, 6, 25, 5]);
    }

    #[test]
    fn advance_matches_tick() {
        let mut a = controller(RefreshPolicy::two_dim_default());
        let mut b = controller(RefreshPolicy::two_dim_default());
        let bytes = [10, 20, 30, 40];
        for now in [0, 359_999, 360_000, 5_000_000, 5_000_000, 36_000_001, 90_000_000] {
            let t = a.refresh_tick(now, &bytes, 1e-9).unwrap();
            let (fired, e) = b.advance(now, &bytes, 1e-9).unwrap();
            assert_eq!(fired.iter().sum::<u64>(), t.events.len() as u64);
            assert!((e - t.energy_j).abs() < 1e-15);
            assert_eq!(a, b);
        }
        assert!(b.advance(1, &bytes, 1.0).is_err());
    }

    #[test]
    fn energy_is_linear_in_bytes() {
        let mut a = controller(RefreshPolicy::UNIFORM_SAFE);
        let mut b = controller(RefreshPolicy::UNIFORM_SAFE);
        let ea = a.refresh_tick(1_000_000, &[100; 4], 2e-12).unwrap().energy_j;
        let eb = b.refresh_tick(1_000_000, &[200; 4], 2e-12).unwrap().energy_j;
        assert!((eb - 2.0 * ea).abs() < 1e-24);
    }

    #[test]
    fn rejects_bad_policies_and_backwards_time() {
        let bad = RefreshPolicy::TwoDim {
            msb_hst_s: 2e-3,
            lsb_hst_s: 5.4e-3,
            msb_lst_s: 1.44e-3,
            lsb_lst_s: 7.2e-3,
        };
        assert!(bad.validate().is_err());
        assert!(RefreshPolicy::Uniform { interval_s: 0.0 }.validate().is_err());
        let mut c = controller(RefreshPolicy::UNIFORM_SAFE);
        c.refresh_tick(10, &[0; 4], 1.0).unwrap();
        assert!(c.refresh_tick(5, &[0; 4], 1.0).is_err());
    }

    #[test]
    fn mean_rate_of_defaults() {
        let r = RefreshPolicy::two_dim_default().mean_rate_hz();
        assert!((r - 949.0741).abs() < 1e-3);
        let ratio = (1.0 / 45e-6) / r;
        assert!((ratio - 23.4146).abs() < 1e-3);
    }
}
