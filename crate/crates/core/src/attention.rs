//! Single-head attention math for toy-scale decoding runs, and the
//! importance scores that drive eviction and refresh classification.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aerp::TokenId;
use crate::error::{config_err, Result};

/// Logit scaling applied before the softmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Raw dot products, `softmax(q . k)`.
    Unscaled,
    /// `softmax(q . k / sqrt(head_dim))`.
    #[default]
    InvSqrtDim,
    Custom(f64),
}

impl Scaling {
    pub fn factor(self, head_dim: usize) -> f64 {
        match self {
            Scaling::Unscaled => 1.0,
            Scaling::InvSqrtDim => 1.0 / (head_dim as f64).sqrt(),
            Scaling::Custom(s) => s,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for o in &mut out {
        *o /= z;
    }
    out
}

fn check_dims<K: AsRef<[f64]>>(q: &[f64], keys: &[K]) -> Result<()> {
    if keys.is_empty() {
        return Err(config_err("attention needs at least one key"));
    }
    if let Some((i, _)) = keys.iter().enumerate().find(|(_, k)| k.as_ref().len() != q.len()) {
        return Err(config_err(format!(
            "key {i} has length {}, query has length {}",
            keys[i].as_ref().len(),
            q.len()
        )));
    }
    Ok(())
}

/// Raw `q . k_n` for every key, without softmax. This is what the systolic
/// evictor accumulates in hardware.
pub fn presoftmax_importance<K: AsRef<[f64]>>(q: &[f64], keys: &[K]) -> Result<Vec<f64>> {
    check_dims(q, keys)?;
    Ok(keys.iter().map(|k| dot(q, k.as_ref())).collect())
}

/// Attention row of one query over the given keys.
pub fn attend<K: AsRef<[f64]>>(q: &[f64], keys: &[K], scaling: Scaling) -> Result<Vec<f64>> {
    let s = scaling.factor(q.len());
    let mut logits = presoftmax_importance(q, keys)?;
    for l in &mut logits {
        *l *= s;
    }
    Ok(softmax(&logits))
}

/// Weighted sum of value vectors.
pub fn mix<V: AsRef<[f64]>>(row: &[f64], values: &[V]) -> Result<Vec<f64>> {
    if row.len() != values.len() {
        return Err(config_err(format!(
            "attention row has {} entries but {} values were given",
            row.len(),
            values.len()
        )));
    }
    let dim = values.first().map(|v| v.as_ref().len()).unwrap_or(0);
    let mut out = vec![0.0; dim];
    for (a, v) in row.iter().zip(values) {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(config_err("value vectors differ in length"));
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o += a * x;
        }
    }
    Ok(out)
}

/// Which index of the attention matrix is summed into a token's importance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceConvention {
    /// Attention *received* by token n from every later query (column sums).
    #[default]
    ColumnSum,
    /// The written-out row form `s_n = sum_i A[n, i]`. Under softmax every
    /// row sums to one, so this only credits the querying token. Kept for
    /// comparison.
    LiteralRowSum,
}

/// Per-head importance scores of the tokens currently resident.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    heads: Vec<BTreeMap<TokenId, f64>>,
    convention: ImportanceConvention,
}

impl ImportanceTable {
    pub fn new(heads: usize) -> Self {
        Self::with_convention(heads, ImportanceConvention::ColumnSum)
    }

    pub fn with_convention(heads: usize, convention: ImportanceConvention) -> Self {
        Self {
            heads: vec![BTreeMap::new(); heads],
            convention,
        }
    }

    pub fn heads(&self) -> usize {
        self.heads.len()
    }

    pub fn get(&self, head: usize, token: TokenId) -> Option<f64> {
        self.heads.get(head)?.get(&token).copied()
    }

    pub fn head(&self, head: usize) -> &BTreeMap<TokenId, f64> {
        &self.heads[head]
    }

    pub fn set(&mut self, head: usize, token: TokenId, score: f64) {
        self.heads[head].insert(token, score);
    }

    pub fn remove(&mut self, head: usize, token: TokenId) -> Option<f64> {
        self.heads[head].remove(&token)
    }

    /// Fold one decoding step's attention row into the table.
    ///
    /// `resident_ids[i]` is the token that received `row[i]`; the querying
    /// token is expected to be last. Tokens not yet in the table start at the
    /// attention they received in this row.
    pub fn accumulate_importance(&mut self, head: usize, row: &[f64], resident_ids: &[TokenId]) -> Result<()> {
        if row.len() != resident_ids.len() {
            return Err(config_err(format!(
                "attention row has {} entries for {} resident ids",
                row.len(),
                resident_ids.len()
            )));
        }
        if head >= self.heads.len() {
            return Err(config_err(format!("head {head} out of range")));
        }
        let table = &mut self.heads[head];
        match self.convention {
            ImportanceConvention::ColumnSum => {
                for (&id, &a) in resident_ids.iter().zip(row) {
                    *table.entry(id).or_insert(0.0) += a;
                }
            }
            ImportanceConvention::LiteralRowSum => {
                for &id in resident_ids {
                    table.entry(id).or_insert(0.0);
                }
                if let Some(&query) = resident_ids.last() {
                    *table.entry(query).or_insert(0.0) += row.iter().sum::<f64>();
                }
            }
        }
        Ok(())
    }
}

/// Importance after a parallel prefill: for each token, the total attention it
/// receives from all context queries (column sums of the causal matrix).
pub fn prefill_scores<R: AsRef<[f64]>>(attn_matrix: &[R]) -> Result<Vec<f64>> {
    let n = attn_matrix.len();
    let mut scores = vec![0.0; n];
    for (i, row) in attn_matrix.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != n {
            return Err(config_err(format!(
                "prefill attention row {i} has {} entries, matrix must be {n}x{n}",
                row.len()
            )));
        }
        for (s, a) in scores.iter_mut().zip(row) {
            *s += a;
        }
    }
    Ok(scores)
}
