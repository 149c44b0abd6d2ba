//! Attention traces as newline-delimited JSON.
//!
//! One record per line:
//!
//! ```text
//! {"step":0,"layer":0,"head":2,"ids":[0,1,5],"row":[0.25,0.5,0.25]}
//! ```
//!
//! `ids[i]` is the token that received `row[i]`; the querying token is last.
//! Rows must be finite, nonnegative and sum to 1 within 1e-6. Blank lines are
//! ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Workload;
use crate::aerp::{AerpCache, CacheBudget, EvictionEvent, RecomputeOptions, TokenId};
use crate::error::{Error, Result};

const ROW_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub step: u64,
    pub layer: usize,
    pub head: usize,
    pub ids: Vec<TokenId>,
    pub row: Vec<f64>,
}

impl TraceRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if self.ids.is_empty() {
            return Err("empty attention row".into());
        }
        if self.ids.len() != self.row.len() {
            return Err(format!("{} ids but {} row entries", self.ids.len(), self.row.len()));
        }
        if let Some(a) = self.row.iter().find(|a| !a.is_finite() || **a < 0.0) {
            return Err(format!("row entry {a} is not a finite nonnegative number"));
        }
        let sum: f64 = self.row.iter().sum();
        if (sum - 1.0).abs() > ROW_TOLERANCE {
            return Err(format!("row sums to {sum}, not 1"));
        }
        let mut sorted = self.ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err("duplicate token id in row".into());
        }
        Ok(())
    }
}

pub fn write_trace<W: Write>(records: &[TraceRecord], out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        rec.check().map_err(|message| Error::Validation { line: i + 1, message })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    read_trace(BufReader::new(File::open(path)?))
}

/// Decode `workload` under the eviction policy for one layer and record every
/// step's rows in slot order.
pub fn generate_trace(workload: &Workload, budget: CacheBudget, layer: usize) -> Result<Vec<TraceRecord>> {
    let spec = workload.spec();
    let heads = spec.shape.heads;
    let mut cache = prefill_cache(workload, budget, RecomputeOptions::OFF)?;
    let mut out = Vec::with_capacity(spec.decode * heads);
    for (step, t) in (spec.prefill..spec.total_tokens()).enumerate() {
        let t = t as TokenId;
        let mut rows = Vec::with_capacity(heads);
        for h in 0..heads {
            let resident = cache.resident_ids(h);
            let row = workload.decode_row(h, resident, t);
            let mut ids = resident.to_vec();
            ids.push(t);
            out.push(TraceRecord {
                step: step as u64,
                layer,
                head: h,
                ids,
                row: row.clone(),
            });
            rows.push(row);
        }
        cache.decode_step(t, &rows)?;
    }
    Ok(out)
}

/// Cache state after the workload's prefill.
pub fn prefill_cache(workload: &Workload, budget: CacheBudget, recompute: RecomputeOptions) -> Result<AerpCache> {
    let spec = workload.spec();
    let scores: Vec<Vec<f64>> = (0..spec.shape.heads).map(|h| workload.prefill_scores(h)).collect();
    AerpCache::from_prefill(&scores, budget, spec.prefill, recompute)
}

/// Records of one layer grouped by step, ascending. Each entry carries the
/// record's index in `records`.
pub fn step_groups(records: &[TraceRecord], layer: usize) -> Vec<Vec<(usize, &TraceRecord)>> {
    let mut layer_records: Vec<(usize, &TraceRecord)> =
        records.iter().enumerate().filter(|(_, r)| r.layer == layer).collect();
    layer_records.sort_by_key(|(i, r)| (r.step, r.head, *i));
    let mut groups: Vec<Vec<(usize, &TraceRecord)>> = Vec::new();
    for rec in layer_records {
        match groups.last_mut() {
            Some(g) if g[0].1.step == rec.1.step => g.push(rec),
            _ => groups.push(vec![rec]),
        }
    }
    groups
}

/// Apply one step group from `step_groups` to `cache`.
///
/// The step must have exactly one record per head whose ids are that head's
/// current residents (any order) followed by the same new token. Errors name
/// the offending record as a 1-based position in the original slice.
pub fn replay_step(cache: &mut AerpCache, group: &[(usize, &TraceRecord)]) -> Result<Vec<EvictionEvent>> {
    let heads = cache.heads();
    let bad = |idx: usize, message: String| Error::Validation { line: idx + 1, message };
    let step = group[0].1.step;
    let heads_seen: Vec<usize> = group.iter().map(|(_, r)| r.head).collect();
    if heads_seen != (0..heads).collect::<Vec<_>>() {
        return Err(bad(group[0].0, format!("step {step} must have one record per head 0..{heads}")));
    }
    let new = *group[0].1.ids.last().ok_or_else(|| bad(group[0].0, "empty attention row".into()))?;
    let mut rows = Vec::with_capacity(heads);
    for &(idx, r) in group {
        r.check().map_err(|m| bad(idx, m))?;
        if *r.ids.last().unwrap() != new {
            return Err(bad(idx, format!("heads disagree on the new token at step {step}")));
        }
        let resident = cache.resident_ids(r.head);
        if resident.len() + 1 != r.ids.len() {
            return Err(bad(
                idx,
                format!("head {} has {} residents, record lists {}", r.head, resident.len(), r.ids.len() - 1),
            ));
        }
        let mut row = Vec::with_capacity(r.row.len());
        for id in resident {
            let pos = r.ids[..r.ids.len() - 1]
                .iter()
                .position(|x| x == id)
                .ok_or_else(|| bad(idx, format!("resident token {id} missing from head {} row", r.head)))?;
            row.push(r.row[pos]);
        }
        row.push(*r.row.last().unwrap());
        rows.push(row);
    }
    cache.decode_step(new, &rows)
}

/// Drive the eviction policy from recorded rows of one layer, starting from
/// `cache` (empty, or as left by a prefill).
pub fn replay_trace(records: &[TraceRecord], layer: usize, mut cache: AerpCache) -> Result<(AerpCache, Vec<EvictionEvent>)> {
    let mut events = Vec::new();
    for group in step_groups(records, layer) {
        events.extend(replay_step(&mut cache, &group)?);
    }
    Ok((cache, events))
}
