use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{config_err, Result};

/// Per-cell retention time modeled as log-normal: a cell left unrefreshed for
/// `t` seconds has failed with probability `P(retention < t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetentionModel {
    /// Mean of ln(retention seconds).
    pub mu: f64,
    /// Standard deviation of ln(retention seconds).
    pub sigma: f64,
}

/// Anchors the default curve is fitted to.
pub mod anchors {
    /// Nominal retention time: failures at this interval must stay below `SAFE_RATE`.
    pub const SAFE_INTERVAL_S: f64 = 45e-6;
    pub const SAFE_RATE: f64 = 1e-6;
    /// Per-group failure rates averaged over the four default adaptive intervals.
    pub const MEAN_GROUP_RATE: f64 = 2e-3;
    pub const GROUP_INTERVALS_S: [f64; 4] = [0.36e-3, 5.4e-3, 1.44e-3, 7.2e-3];
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

impl RetentionModel {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !mu.is_finite() || !sigma.is_finite() {
            return Err(config_err(format!("retention curve needs finite mu and sigma > 0, got ({mu}, {sigma})")));
        }
        Ok(Self { mu, sigma })
    }

    /// Probability that a cell has lost its value after `elapsed_s` seconds.
    pub fn failure_rate(&self, elapsed_s: f64) -> f64 {
        if !(elapsed_s > 0.0) {
            return 0.0;
        }
        std_normal().cdf((elapsed_s.ln() - self.mu) / self.sigma)
    }

    /// Probability that a cell still intact after `from_s` fails by `to_s`.
    pub fn conditional_failure(&self, from_s: f64, to_s: f64) -> f64 {
        if to_s <= from_s {
            return 0.0;
        }
        let f1 = self.failure_rate(from_s);
        let f2 = self.failure_rate(to_s);
        if f1 >= 1.0 {
            return 0.0;
        }
        ((f2 - f1) / (1.0 - f1)).clamp(0.0, 1.0)
    }

    /// Curve through two (interval, failure rate) points.
    pub fn through_points(t1: f64, p1: f64, t2: f64, p2: f64) -> Result<Self> {
        if !(t1 > 0.0 && t2 > t1 && p1 > 0.0 && p2 > p1 && p2 < 1.0) {
            return Err(config_err("retention anchors must be increasing in both time and rate"));
        }
        let n = std_normal();
        let (z1, z2) = (n.inverse_cdf(p1), n.inverse_cdf(p2));
        let sigma = (t2.ln() - t1.ln()) / (z2 - z1);
        Self::new(t1.ln() - sigma * z1, sigma)
    }

    /// Curve passing exactly through `(safe_t, safe_p)` whose failure rates at
    /// `intervals` average to `mean_rate`.
    pub fn fit_group_mean(safe_t: f64, safe_p: f64, intervals: &[f64], mean_rate: f64) -> Result<Self> {
        if intervals.is_empty() || intervals.iter().any(|&t| t <= safe_t) {
            return Err(config_err("group intervals must all exceed the safe interval"));
        }
        let z = std_normal().inverse_cdf(safe_p);
        let model = |sigma: f64| RetentionModel {
            mu: safe_t.ln() - sigma * z,
            sigma,
        };
        let mean = |sigma: f64| {
            let m = model(sigma);
            intervals.iter().map(|&t| m.failure_rate(t)).sum::<f64>() / intervals.len() as f64
        };
        // The mean rate falls as sigma grows, since every interval sits above the anchor.
        let (mut lo, mut hi) = (1e-3, 100.0);
        if !(mean(lo) > mean_rate && mean(hi) < mean_rate) {
            return Err(config_err(format!("no log-normal curve reaches mean rate {mean_rate}")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mean(mid) > mean_rate {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(model(0.5 * (lo + hi)))
    }

    /// The curve fitted to the default anchors.
    pub fn fitted_default() -> Self {
        Self::fit_group_mean(
            anchors::SAFE_INTERVAL_S,
            anchors::SAFE_RATE,
            &anchors::GROUP_INTERVALS_S,
            anchors::MEAN_GROUP_RATE,
        )
        .expect("default anchors are consistent")
    }
}

impl Default for RetentionModel {
    fn default() -> Self {
        Self::fitted_default()
    }
}
