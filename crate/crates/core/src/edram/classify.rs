use serde::{Deserialize, Serialize};

use super::refresh::ImportanceClass;
use crate::primitives::ImportanceScore;

/// How the HST/LST boundary is drawn over the live scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Lower median of the accumulated scores.
    #[default]
    Median,
    /// Lower median of the 4-bit register codes.
    QuantizedMedian,
    /// A fixed accumulated-score threshold.
    Fixed(f64),
}

fn key(s: &ImportanceScore, policy: ThresholdPolicy) -> f64 {
    match policy {
        ThresholdPolicy::QuantizedMedian => s.quantized as f64,
        _ => s.accumulated,
    }
}

/// Threshold for the current live set; a token is HST iff its key is
/// strictly above it.
pub fn threshold(scores: &[ImportanceScore], policy: ThresholdPolicy) -> f64 {
    if let ThresholdPolicy::Fixed(t) = policy {
        return t;
    }
    if scores.is_empty() {
        return f64::INFINITY;
    }
    let mut keys: Vec<f64> = scores.iter().map(|s| key(s, policy)).collect();
    keys.sort_by(f64::total_cmp);
    keys[(keys.len() - 1) / 2]
}

pub fn classify(score: &ImportanceScore, threshold: f64, policy: ThresholdPolicy) -> ImportanceClass {
    if key(score, policy) > threshold {
        ImportanceClass::Hst
    } else {
        ImportanceClass::Lst
    }
}

pub fn classify_all(scores: &[ImportanceScore], policy: ThresholdPolicy) -> Vec<ImportanceClass> {
    let t = threshold(scores, policy);
    scores.iter().map(|s| classify(s, t, policy)).collect()
}

/// Class of a shared input vector: judged by its best per-head score.
pub fn input_vector_score(per_head: &[ImportanceScore]) -> ImportanceScore {
    per_head
        .iter()
        .copied()
        .max_by(|a, b| a.accumulated.total_cmp(&b.accumulated))
        .unwrap_or_default()
}
