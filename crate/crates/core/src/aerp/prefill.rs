use std::collections::BTreeSet;

use super::{CacheBudget, TokenId};

/// Resident set per head after prefilling `n_cxt` tokens.
///
/// `scores[h][n]` is the prefill importance of token `n` in head `h`. Each head
/// keeps the sinks, the last `recent_window` tokens, and fills the remaining
/// budget with the highest-scoring tokens (ties to the lower id).
pub fn prefill_select(scores: &[Vec<f64>], budget: &CacheBudget, n_cxt: usize) -> Vec<BTreeSet<TokenId>> {
    scores
        .iter()
        .map(|head_scores| {
            if n_cxt <= budget.n_prime {
                return (0..n_cxt as TokenId).collect();
            }
            let incoming = n_cxt as TokenId;
            let mut keep: BTreeSet<TokenId> = (0..n_cxt as TokenId)
                .filter(|&id| budget.is_protected(id, incoming))
                .collect();
            let mut rest: Vec<TokenId> = (0..n_cxt as TokenId).filter(|id| !keep.contains(id)).collect();
            rest.sort_by(|&a, &b| {
                head_scores[b as usize]
                    .total_cmp(&head_scores[a as usize])
                    .then(a.cmp(&b))
            });
            let room = budget.n_prime - keep.len();
            keep.extend(rest.into_iter().take(room));
            keep
        })
        .collect()
}

/// Tokens resident in a strict majority of heads.
pub fn popular_tokens(resident: &[BTreeSet<TokenId>]) -> BTreeSet<TokenId> {
    let heads = resident.len();
    let mut counts = std::collections::BTreeMap::<TokenId, usize>::new();
    for set in resident {
        for &id in set {
            *counts.entry(id).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter(|&(_, c)| 2 * c > heads)
        .map(|(id, _)| id)
        .collect()
}

/// Fraction of tokens popular after prefill that are still popular at the end
/// of decoding. Returns 1.0 when nothing was popular to begin with.
pub fn popularity_stability(at_prefill: &BTreeSet<TokenId>, at_end: &BTreeSet<TokenId>) -> f64 {
    if at_prefill.is_empty() {
        return 1.0;
    }
    at_prefill.intersection(at_end).count() as f64 / at_prefill.len() as f64
}

/// Order recomputation candidates: most heads first, then the larger total
/// score, then the lower id. `candidates` holds `(id, resident heads, total score)`.
pub fn rank_for_recompute(candidates: &mut [(TokenId, usize, f64)]) {
    candidates.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)));
}
