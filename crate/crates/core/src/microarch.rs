//! Throughput and timing of the reconfigurable systolic array, and the
//! systolic evictor that tracks the minimum importance score alongside it.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsaConfig {
    pub rows: usize,
    pub cols: usize,
    pub clock_hz: f64,
}

impl Default for RsaConfig {
    fn default() -> Self {
        Self {
            rows: 32,
            cols: 32,
            clock_hz: 1e9,
        }
    }
}

impl RsaConfig {
    pub fn new(rows: usize, cols: usize, clock_hz: f64) -> Result<Self> {
        if rows == 0 || cols == 0 || !(clock_hz > 0.0) {
            return Err(config_err("systolic array needs rows, cols >= 1 and a positive clock"));
        }
        Ok(Self { rows, cols, clock_hz })
    }

    pub fn pes(&self) -> usize {
        self.rows * self.cols
    }

    /// Peak ops per second, counting a MAC as two ops.
    pub fn top(&self) -> f64 {
        self.pes() as f64 * 2.0 * self.clock_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmCost {
    /// Operations of the (m x k) . (k x n) product.
    pub ops: u64,
    pub seconds: f64,
    /// Cycles at full PE utilization, rounded up.
    pub cycles: u64,
}

/// Cost of an (m x k) by (k x n) product at peak throughput.
pub fn mm_cycles(m: usize, k: usize, n: usize, rsa: &RsaConfig) -> MmCost {
    let ops = 2 * m as u64 * k as u64 * n as u64;
    let seconds = ops as f64 / rsa.top();
    MmCost {
        ops,
        seconds,
        cycles: ops.div_ceil(2 * rsa.pes() as u64),
    }
}

/// Cycles of a weight-stationary product with staggered row injection.
///
/// Each `rows x cols` weight tile streams all `m` input rows through, then the
/// array drains its `rows + cols - 1` pipeline stages once at the end. Extra
/// input rows cost one cycle each instead of a new pass over the weights.
pub fn staggered_cycles(m: usize, k: usize, n: usize, rsa: &RsaConfig) -> u64 {
    if m == 0 || k == 0 || n == 0 {
        return 0;
    }
    let tiles = k.div_ceil(rsa.rows) as u64 * n.div_ceil(rsa.cols) as u64;
    tiles * m as u64 + (rsa.rows + rsa.cols - 1) as u64
}

/// Register state of the evictor: the S column of per-row scores and the M
/// chain carrying the running (min, index) down the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvictorState {
    pub s: Vec<f64>,
    pub m: Option<(f64, usize)>,
}

impl EvictorState {
    pub fn new(scores: Vec<f64>) -> Self {
        Self { s: scores, m: None }
    }

    /// Push row `r` through the chain. Strict comparison keeps the earlier
    /// row on ties.
    pub fn step(&mut self, r: usize) {
        let v = self.s[r];
        match self.m {
            Some((best, _)) if !(v < best) => {}
            _ => self.m = Some((v, r)),
        }
    }
}

/// Minimum score and its lowest index, scanning `rows_per_pass` rows per pass.
/// Returns `None` for an empty score vector.
pub fn evictor_scan(scores: &[f64], rows_per_pass: usize) -> Option<(f64, usize)> {
    let mut state = EvictorState::new(scores.to_vec());
    let per = rows_per_pass.max(1);
    for pass in 0..scores.len().div_ceil(per) {
        for r in pass * per..((pass + 1) * per).min(scores.len()) {
            state.step(r);
        }
    }
    state.m
}

/// Passes the evictor needs for `n` resident tokens.
pub fn evictor_passes(n: usize, rows_per_pass: usize) -> usize {
    n.div_ceil(rows_per_pass.max(1))
}

/// Accumulate raw (pre-softmax) q.k products into the S registers.
pub fn evictor_importance_update(s: &mut [f64], raw: &[f64]) -> Result<()> {
    if s.len() != raw.len() {
        return Err(config_err(format!("{} raw products for {} score registers", raw.len(), s.len())));
    }
    for (a, r) in s.iter_mut().zip(raw) {
        *a += r;
    }
    Ok(())
}

/// Tally of whether raw-sum and softmax-sum scores pick the same victim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgreementTally {
    pub decisions: u64,
    pub agreements: u64,
}

impl AgreementTally {
    pub fn record(&mut self, hardware: &[f64], exact: &[f64]) {
        let a = evictor_scan(hardware, usize::MAX).map(|x| x.1);
        let b = evictor_scan(exact, usize::MAX).map(|x| x.1);
        self.decisions += 1;
        self.agreements += (a == b) as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.decisions == 0 {
            1.0
        } else {
            self.agreements as f64 / self.decisions as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn top_of_default_array() {
        assert_eq!(RsaConfig::default().top(), 2.048e12);
        assert!(RsaConfig::new(0, 4, 1e9).is_err());
    }

    #[test]
    fn mm_formula() {
        let rsa = RsaConfig::default();
        let c = mm_cycles(1, 4096, 4096, &rsa);
        assert_eq!(c.ops, 2 * 4096 * 4096);
        assert_eq!(c.seconds, c.ops as f64 / rsa.top());
        assert_eq!(c.cycles, 16384);
        assert_eq!(mm_cycles(0, 4096, 4096, &rsa).cycles, 0);
        assert_eq!(staggered_cycles(3, 0, 8, &rsa), 0);
    }

    #[test]
    fn batched_rows_scale_ops_linearly() {
        let rsa = RsaConfig::default();
        let one = mm_cycles(1, 256, 256, &rsa);
        let five = mm_cycles(5, 256, 256, &rsa);
        assert_eq!(five.ops, 5 * one.ops);
    }

    #[test]
    fn staggered_batching_beats_separate_passes() {
        let rsa = RsaConfig::default();
        let single = staggered_cycles(1, 512, 512, &rsa);
        let tiles = (512 / 32) * (512 / 32);
        for r in 1..40usize {
            let batch = staggered_cycles(r + 1, 512, 512, &rsa);
            assert!(batch < (r as u64 + 1) * single);
            assert!(batch <= single + r as u64 * tiles);
        }
    }

    #[test]
    fn evictor_examples() {
        assert_eq!(evictor_scan(&[4.0], 32), Some((4.0, 0)));
        assert_eq!(evictor_scan(&[5.0, 4.0, 3.0, 2.0], 32), Some((2.0, 3)));
        assert_eq!(evictor_scan(&[], 32), None);
        let mut s = vec![0.0; 3];
        evictor_importance_update(&mut s, &[0.0; 3]).unwrap();
        assert_eq!(s, vec![0.0; 3]);
        evictor_importance_update(&mut s, &[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(evictor_scan(&s, 32), Some((1.0, 1)));
        assert!(evictor_importance_update(&mut s, &[1.0]).is_err());
        assert_eq!(evictor_passes(2048, 32), 64);
    }

    fn linear_argmin(v: &[f64]) -> (f64, usize) {
        let mut best = (v[0], 0);
        for (i, &x) in v.iter().enumerate() {
            if x < best.0 {
                best = (x, i);
            }
        }
        best
    }

    proptest! {
        #[test]
        fn scan_matches_linear_oracle(v in prop::collection::vec(0u8..6, 1..200), per in 1usize..70) {
            // small integer alphabet forces ties
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            prop_assert_eq!(evictor_scan(&v, per), Some(linear_argmin(&v)));
        }

        #[test]
        fn top_monotone(r in 1usize..64, c in 1usize..64, f in 1e8f64..2e9) {
            let base = RsaConfig::new(r, c, f).unwrap().top();
            prop_assert!(RsaConfig::new(r + 1, c, f).unwrap().top() > base);
            prop_assert!(RsaConfig::new(r, c + 1, f).unwrap().top() > base);
            prop_assert!(RsaConfig::new(r, c, f * 1.5).unwrap().top() > base);
        }
    }
}
