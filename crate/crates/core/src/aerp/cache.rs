use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::format::{bytes_input_vector, choose_format, StorageFormat};
use super::prefill::{prefill_select, rank_for_recompute};
use super::{CacheBudget, TokenId};
use crate::error::{config_err, Error, Result};
use crate::primitives::ModelShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RecomputeOptions {
    pub enabled: bool,
    /// Upper bound on tokens held as input vectors at once. `None` is unbounded.
    pub cap: Option<usize>,
}

impl RecomputeOptions {
    pub const OFF: RecomputeOptions = RecomputeOptions {
        enabled: false,
        cap: None,
    };

    pub fn capped(cap: usize) -> Self {
        Self {
            enabled: true,
            cap: Some(cap),
        }
    }

    pub fn unbounded() -> Self {
        Self {
            enabled: true,
            cap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvictionEvent {
    pub head: usize,
    pub evicted: TokenId,
    pub incoming: TokenId,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PolicyStats {
    pub steps: u64,
    pub evictions: u64,
    /// Token-steps whose K/V were rebuilt from a stored input vector.
    pub recomputations: u64,
    pub admitted_kv_split: u64,
    pub admitted_input_vector: u64,
    /// Input-vector tokens whose residency fell to half the heads or fewer.
    pub frozen_format_drops: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    format: StorageFormat,
    residency: Vec<bool>,
    resident_heads: usize,
    dropped: bool,
}

/// Per-sequence, per-layer cache state under the eviction policy.
///
/// Each head owns `n_prime` slots. An evicted token's slot is reused by the
/// incoming token, so slot order is not token order.
#[derive(Debug, Clone, PartialEq)]
pub struct AerpCache {
    budget: CacheBudget,
    ids: Vec<Vec<TokenId>>,
    scores: Vec<Vec<f64>>,
    entries: BTreeMap<TokenId, Entry>,
    recompute: RecomputeOptions,
    iv_tokens: usize,
    kv_pairs: usize,
    stats: PolicyStats,
}

impl AerpCache {
    pub fn new(heads: usize, budget: CacheBudget, recompute: RecomputeOptions) -> Result<Self> {
        budget.validate()?;
        if heads == 0 {
            return Err(config_err("cache needs at least one head"));
        }
        Ok(Self {
            budget,
            ids: vec![Vec::with_capacity(budget.n_prime); heads],
            scores: vec![Vec::with_capacity(budget.n_prime); heads],
            entries: BTreeMap::new(),
            recompute,
            iv_tokens: 0,
            kv_pairs: 0,
            stats: PolicyStats::default(),
        })
    }

    /// Cache after a parallel prefill of `n_cxt` tokens with per-head scores
    /// `scores[h][n]`.
    pub fn from_prefill(
        scores: &[Vec<f64>],
        budget: CacheBudget,
        n_cxt: usize,
        recompute: RecomputeOptions,
    ) -> Result<Self> {
        let heads = scores.len();
        let mut cache = Self::new(heads, budget, recompute)?;
        if let Some(h) = scores.iter().position(|s| s.len() != n_cxt) {
            return Err(config_err(format!(
                "prefill scores for head {h} have {} entries, expected {n_cxt}",
                scores[h].len()
            )));
        }
        let sets = prefill_select(scores, &budget, n_cxt);
        let mut residency: BTreeMap<TokenId, Vec<bool>> = BTreeMap::new();
        for (h, set) in sets.iter().enumerate() {
            for &id in set {
                cache.ids[h].push(id);
                cache.scores[h].push(scores[h][id as usize]);
                residency.entry(id).or_insert_with(|| vec![false; heads])[h] = true;
            }
        }

        let mut popular: Vec<(TokenId, usize, f64)> = residency
            .iter()
            .filter(|(_, r)| choose_format(r) == StorageFormat::InputVector)
            .map(|(&id, r)| {
                let total = (0..heads).filter(|&h| r[h]).map(|h| scores[h][id as usize]).sum();
                (id, r.iter().filter(|&&x| x).count(), total)
            })
            .collect();
        rank_for_recompute(&mut popular);
        let allowed = if recompute.enabled {
            recompute.cap.unwrap_or(usize::MAX).min(popular.len())
        } else {
            0
        };
        let as_input: BTreeSet<TokenId> = popular[..allowed].iter().map(|p| p.0).collect();

        for (id, r) in residency {
            let format = if as_input.contains(&id) {
                StorageFormat::InputVector
            } else {
                StorageFormat::KvSplit
            };
            cache.insert_entry(id, r, format);
        }
        Ok(cache)
    }

    fn insert_entry(&mut self, id: TokenId, residency: Vec<bool>, format: StorageFormat) {
        let resident_heads = residency.iter().filter(|&&r| r).count();
        match format {
            StorageFormat::InputVector => {
                self.iv_tokens += 1;
                self.stats.admitted_input_vector += 1;
            }
            StorageFormat::KvSplit => {
                self.kv_pairs += resident_heads;
                self.stats.admitted_kv_split += 1;
            }
        }
        self.entries.insert(
            id,
            Entry {
                format,
                residency,
                resident_heads,
                dropped: false,
            },
        );
    }

    fn drop_residency(&mut self, id: TokenId, head: usize) {
        let heads = self.heads();
        let Some(e) = self.entries.get_mut(&id) else {
            return;
        };
        e.residency[head] = false;
        e.resident_heads -= 1;
        match e.format {
            StorageFormat::KvSplit => self.kv_pairs -= 1,
            StorageFormat::InputVector => {
                if !e.dropped && 2 * e.resident_heads <= heads {
                    e.dropped = true;
                    self.stats.frozen_format_drops += 1;
                }
            }
        }
        if e.resident_heads == 0 {
            if e.format == StorageFormat::InputVector {
                self.iv_tokens -= 1;
            }
            self.entries.remove(&id);
        }
    }

    /// One decoding step: fold the attention rows into the scores, then admit.
    ///
    /// `rows[h]` covers `resident_ids(h)` in slot order followed by the
    /// incoming token's attention to itself.
    pub fn decode_step<R: AsRef<[f64]>>(&mut self, new_token: TokenId, rows: &[R]) -> Result<Vec<EvictionEvent>> {
        if rows.len() != self.heads() {
            return Err(config_err(format!(
                "got attention rows for {} heads, cache has {}",
                rows.len(),
                self.heads()
            )));
        }
        if self.entries.contains_key(&new_token) {
            return Err(Error::Protocol(format!("token {new_token} is already resident")));
        }
        for (h, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != self.ids[h].len() + 1 {
                return Err(config_err(format!(
                    "head {h}: row has {} entries for {} residents plus the new token",
                    row.len(),
                    self.ids[h].len()
                )));
            }
        }
        for (h, row) in rows.iter().enumerate() {
            for (s, a) in self.scores[h].iter_mut().zip(row.as_ref()) {
                *s += a;
            }
        }
        self.stats.recomputations += self.iv_tokens as u64;
        let initial: Vec<f64> = rows.iter().map(|r| *r.as_ref().last().unwrap()).collect();
        self.admit_decoding(new_token, &initial)
    }

    /// Insert `new_token` in every head, evicting the lowest-scoring
    /// unprotected resident where a head is full. Ties evict the lower id.
    pub fn admit_decoding(&mut self, new_token: TokenId, initial_scores: &[f64]) -> Result<Vec<EvictionEvent>> {
        if initial_scores.len() != self.heads() {
            return Err(config_err("one initial score per head is required"));
        }
        if self.entries.contains_key(&new_token) {
            return Err(Error::Protocol(format!("token {new_token} is already resident")));
        }
        let step = self.stats.steps;
        let mut events = Vec::new();
        for h in 0..self.heads() {
            if self.ids[h].len() < self.budget.n_prime {
                self.ids[h].push(new_token);
                self.scores[h].push(initial_scores[h]);
                continue;
            }
            let slot = self
                .eviction_candidate(h, new_token)
                .ok_or_else(|| Error::Protocol(format!("head {h} is full and every resident is protected")))?;
            let evicted = self.ids[h][slot];
            self.ids[h][slot] = new_token;
            self.scores[h][slot] = initial_scores[h];
            self.drop_residency(evicted, h);
            self.stats.evictions += 1;
            events.push(EvictionEvent {
                head: h,
                evicted,
                incoming: new_token,
                step,
            });
        }
        let residency = vec![true; self.heads()];
        let under_cap = self.recompute.cap.is_none_or(|c| self.iv_tokens < c);
        let format = if self.recompute.enabled && under_cap {
            choose_format(&residency)
        } else {
            StorageFormat::KvSplit
        };
        self.insert_entry(new_token, residency, format);
        self.stats.steps += 1;
        Ok(events)
    }

    /// Slot of the resident that would be evicted for `incoming` in head `h`.
    pub fn eviction_candidate(&self, h: usize, incoming: TokenId) -> Option<usize> {
        let mut best: Option<(usize, f64, TokenId)> = None;
        for (slot, (&id, &s)) in self.ids[h].iter().zip(&self.scores[h]).enumerate() {
            if self.budget.is_protected(id, incoming) {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, bs, bid)) => s < bs || (s == bs && id < bid),
            };
            if better {
                best = Some((slot, s, id));
            }
        }
        best.map(|b| b.0)
    }

    pub fn heads(&self) -> usize {
        self.ids.len()
    }

    pub fn budget(&self) -> &CacheBudget {
        &self.budget
    }

    pub fn recompute(&self) -> RecomputeOptions {
        self.recompute
    }

    /// Resident tokens of head `h` in slot order.
    pub fn resident_ids(&self, h: usize) -> &[TokenId] {
        &self.ids[h]
    }

    /// Accumulated scores of head `h`, aligned with `resident_ids(h)`.
    pub fn head_scores(&self, h: usize) -> &[f64] {
        &self.scores[h]
    }

    pub fn score(&self, h: usize, id: TokenId) -> Option<f64> {
        let slot = self.ids[h].iter().position(|&x| x == id)?;
        Some(self.scores[h][slot])
    }

    pub fn resident_sets(&self) -> Vec<BTreeSet<TokenId>> {
        self.ids.iter().map(|ids| ids.iter().copied().collect()).collect()
    }

    pub fn is_resident(&self, id: TokenId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn format(&self, id: TokenId) -> Option<StorageFormat> {
        self.entries.get(&id).map(|e| e.format)
    }

    pub fn residency(&self, id: TokenId) -> Option<&[bool]> {
        self.entries.get(&id).map(|e| e.residency.as_slice())
    }

    /// Distinct tokens resident in at least one head, ascending.
    pub fn tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.entries.keys().copied()
    }

    /// (token, head) pairs held as split K/V.
    pub fn kv_split_pairs(&self) -> usize {
        self.kv_pairs
    }

    pub fn input_vector_tokens(&self) -> usize {
        self.iv_tokens
    }

    /// Total (token, head) residencies across both formats.
    pub fn resident_pairs(&self) -> usize {
        self.ids.iter().map(Vec::len).sum()
    }

    /// KV eDRAM bytes this cache occupies for one layer.
    pub fn footprint_bytes(&self, shape: &ModelShape) -> u64 {
        self.kv_pairs as u64 * 4 * shape.head_dim() as u64 + self.iv_tokens as u64 * bytes_input_vector(shape)
    }

    pub fn popular_tokens(&self) -> BTreeSet<TokenId> {
        super::popular_tokens(&self.resident_sets())
    }

    pub fn stats(&self) -> &PolicyStats {
        &self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cache(n: usize, sinks: usize, recent: usize, heads: usize) -> AerpCache {
        AerpCache::new(heads, CacheBudget::new(n, sinks, recent).unwrap(), RecomputeOptions::OFF).unwrap()
    }

    #[test]
    fn fills_then_evicts_minimum() {
        let mut c = cache(3, 0, 0, 1);
        c.decode_step(0, &[vec![1.0]]).unwrap();
        c.decode_step(1, &[vec![0.5, 0.5]]).unwrap();
        c.decode_step(2, &[vec![0.6, 0.1, 0.3]]).unwrap();
        // scores 2.1, 0.6, 0.3 plus this row's contributions
        let ev = c.decode_step(3, &[vec![0.1, 0.1, 0.1, 0.7]]).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].evicted, 2);
        assert_eq!(c.resident_ids(0), &[0, 1, 3]);
        assert_eq!(c.stats().evictions, 1);
    }

    #[test]
    fn forced_choice_is_the_middle_token() {
        let mut c = cache(4, 1, 2, 1);
        for t in 0..4u32 {
            let n = c.resident_ids(0).len() + 1;
            c.decode_step(t, &[vec![1.0 / n as f64; n]]).unwrap();
        }
        // sink 0, recents 2 and 3, so only token 1 can go
        let ev = c.decode_step(4, &[vec![0.0, 0.0, 0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(ev[0].evicted, 1);
    }

    #[test]
    fn ties_evict_the_lower_id() {
        let mut c = cache(3, 0, 0, 1);
        c.decode_step(0, &[vec![0.0]]).unwrap();
        c.decode_step(1, &[vec![0.0, 0.0]]).unwrap();
        c.decode_step(2, &[vec![0.0, 0.0, 0.0]]).unwrap();
        let ev = c.decode_step(3, &[vec![0.0; 4]]).unwrap();
        assert_eq!(ev[0].evicted, 0);
        let ev = c.decode_step(4, &[vec![0.0; 4]]).unwrap();
        assert_eq!(ev[0].evicted, 1);
    }

    #[test]
    fn heads_evict_independently_and_formats_follow_residency() {
        let budget = CacheBudget::new(2, 0, 0).unwrap();
        let scores = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.6]];
        let mut c = AerpCache::from_prefill(&scores, budget, 2, RecomputeOptions::unbounded()).unwrap();
        assert_eq!(c.format(0), Some(StorageFormat::InputVector));
        let ev = c
            .decode_step(2, &[vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]])
            .unwrap();
        let evicted: Vec<TokenId> = ev.iter().map(|e| e.evicted).collect();
        assert_eq!(evicted, vec![1, 0, 0]);
        // token 0 now lives only in head 0: still an input vector, flagged once
        assert_eq!(c.format(0), Some(StorageFormat::InputVector));
        assert_eq!(c.residency(0), Some(&[true, false, false][..]));
        assert_eq!(c.stats().frozen_format_drops, 1);
        assert_eq!(c.residency(1), Some(&[false, true, true][..]));
    }

    #[test]
    fn recompute_cap_limits_input_vectors() {
        let budget = CacheBudget::new(8, 0, 0).unwrap();
        let scores = vec![vec![1.0; 4]; 2];
        let c = AerpCache::from_prefill(&scores, budget, 4, RecomputeOptions::capped(1)).unwrap();
        assert_eq!(c.input_vector_tokens(), 1);
        assert_eq!(c.format(0), Some(StorageFormat::InputVector));
        assert_eq!(c.kv_split_pairs(), 6);

        let off = AerpCache::from_prefill(&scores, budget, 4, RecomputeOptions::OFF).unwrap();
        assert_eq!(off.input_vector_tokens(), 0);
    }

    #[test]
    fn footprint_counts_both_formats() {
        let shape = ModelShape::new(8, 2, 1).unwrap();
        let budget = CacheBudget::new(8, 0, 0).unwrap();
        let scores = vec![vec![1.0; 3]; 2];
        let c = AerpCache::from_prefill(&scores, budget, 3, RecomputeOptions::capped(1)).unwrap();
        // one input vector (16 B) + 2 tokens x 2 heads x K,V x 4 elems x 2 B
        assert_eq!(c.footprint_bytes(&shape), 16 + 4 * 16);
    }

    #[test]
    fn readmitting_a_resident_token_is_a_protocol_error() {
        let mut c = cache(3, 0, 0, 1);
        c.decode_step(0, &[vec![1.0]]).unwrap();
        assert!(matches!(c.decode_step(0, &[vec![0.5, 0.5]]), Err(Error::Protocol(_))));
        assert!(c.decode_step(1, &[vec![1.0]]).is_err());
    }
}
