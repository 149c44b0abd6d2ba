use serde::{Deserialize, Serialize};

/// Largest 4-bit score code.
pub const SCORE_MAX_CODE: u8 = 15;

/// Quantize a nonnegative score to a 4-bit code: `clamp(round(score / scale), 0, 15)`,
/// rounding ties to even.
pub fn quantize4(score: f64, scale: f64) -> u8 {
    debug_assert!(scale > 0.0, "quantize4 scale must be positive");
    if !(score > 0.0) {
        return 0;
    }
    let q = (score / scale).round_ties_even();
    q.min(SCORE_MAX_CODE as f64) as u8
}

/// Accumulated attention received by a token in one head, and its register code.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImportanceScore {
    pub accumulated: f64,
    pub quantized: u8,
}

/// Per-layer 4-bit quantizer whose scale tracks the running maximum score.
///
/// The scale is `max_seen / 15` and only ever grows, so a code never has to be
/// re-derived from a smaller scale.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreQuantizer {
    max_seen: f64,
}

impl ScoreQuantizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, score: f64) {
        if score > self.max_seen {
            self.max_seen = score;
        }
    }

    pub fn scale(&self) -> f64 {
        if self.max_seen > 0.0 {
            self.max_seen / SCORE_MAX_CODE as f64
        } else {
            1.0
        }
    }

    pub fn score(&self, accumulated: f64) -> ImportanceScore {
        ImportanceScore {
            accumulated,
            quantized: quantize4(accumulated, self.scale()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Scalar reference: round half to even written out by hand.
    fn reference_quantize(score: f64, scale: f64) -> u8 {
        let x = score / scale;
        let fl = x.floor();
        let frac = x - fl;
        let r = if frac > 0.5 {
            fl + 1.0
        } else if frac < 0.5 {
            fl
        } else if (fl as i64) % 2 == 0 {
            fl
        } else {
            fl + 1.0
        };
        r.clamp(0.0, 15.0) as u8
    }

    #[test]
    fn examples() {
        assert_eq!(quantize4(0.0, 3.0), 0);
        assert_eq!(quantize4(15.0 * 0.2, 0.2), 15);
        assert_eq!(quantize4(1000.0, 0.2), 15);
        assert_eq!(quantize4(7.4, 1.0), 7);
        assert_eq!(quantize4(7.5, 1.0), 8);
        assert_eq!(quantize4(6.5, 1.0), 6);
        for s in [0.0, 0.3, 2.5, 7.4, 7.5, 8.5, 14.49, 14.5, 20.0] {
            assert_eq!(quantize4(s, 1.0), reference_quantize(s, 1.0), "score {s}");
        }
    }

    #[test]
    fn running_max_scale_never_shrinks() {
        let mut q = ScoreQuantizer::new();
        q.observe(3.0);
        let s1 = q.scale();
        q.observe(1.0);
        assert_eq!(q.scale(), s1);
        q.observe(30.0);
        assert_eq!(q.scale(), 2.0);
        assert_eq!(q.score(30.0).quantized, 15);
    }

    proptest! {
        #[test]
        fn monotone_and_saturating(a in 0.0f64..100.0, b in 0.0f64..100.0, scale in 0.01f64..10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize4(lo, scale) <= quantize4(hi, scale));
            prop_assert!(quantize4(hi, scale) <= 15);
            prop_assert_eq!(quantize4(a, scale), reference_quantize(a, scale));
        }
    }
}
