use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::WorkloadSpec;
use crate::aerp::TokenId;
use crate::error::{config_err, Result};
use crate::primitives::{FixedMatrix, ModelShape, SimRng, Value16};

/// Salience ranks are drawn uniformly from `1..=SALIENCE_RANKS`.
pub const SALIENCE_RANKS: u32 = 1000;

const SALIENCE_STREAM: u64 = 0x5A11;
const TOY_MATRIX_STREAM: u64 = 0x70F;
const TOY_INPUT_STREAM: u64 = 0x1A9;

/// Gini coefficient of nonnegative values (0 = perfectly even).
pub fn gini(values: &[f64]) -> f64 {
    let n = values.len();
    let total: f64 = values.iter().sum();
    if n == 0 || total <= 0.0 {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let weighted: f64 = v.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x).sum();
    2.0 * weighted / (n as f64 * total) - (n as f64 + 1.0) / n as f64
}

/// Gini of the salience distribution `r^-skew` with `r` uniform on the ranks.
/// This is the concentration a long attention row approaches for a given skew.
/// A single row of a few thousand tokens scatters around it by about 0.03 at
/// skew 1, so measure over long rows and average across heads.
pub fn expected_gini(skew: f64) -> f64 {
    let w: Vec<f64> = (1..=SALIENCE_RANKS).map(|r| (r as f64).powf(-skew)).collect();
    gini(&w)
}

/// Synthetic attention source.
///
/// Every token gets a salience `r^-skew` per head, where `r` is a uniform rank
/// that is shared across heads with probability `head_correlation`. A query's
/// attention row is the salience of the keys it sees, renormalized. This is a
/// stand-in for real model attention, not a fit to it.
#[derive(Debug, Clone)]
pub struct Workload {
    spec: WorkloadSpec,
    ranks: Vec<Vec<u32>>,
    salience: Vec<Vec<f64>>,
}

impl Workload {
    pub fn new(spec: WorkloadSpec) -> Result<Self> {
        spec.validate()?;
        let heads = spec.shape.heads;
        let n = spec.total_tokens();
        let rng = SimRng::new(spec.seed);
        let mut ranks = vec![Vec::with_capacity(n); heads];
        for t in 0..n {
            let mut s = rng.stream(&[SALIENCE_STREAM, t as u64]);
            let shared = s.random::<f64>() < spec.head_correlation;
            let shared_rank = s.random_range(1..=SALIENCE_RANKS);
            for head_ranks in ranks.iter_mut() {
                let r = if shared {
                    shared_rank
                } else {
                    s.random_range(1..=SALIENCE_RANKS)
                };
                head_ranks.push(r);
            }
        }
        let salience = ranks
            .iter()
            .map(|rs| rs.iter().map(|&r| (r as f64).powf(-spec.skew)).collect())
            .collect();
        Ok(Self { spec, ranks, salience })
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn rank(&self, head: usize, token: TokenId) -> u32 {
        self.ranks[head][token as usize]
    }

    pub fn salience(&self, head: usize, token: TokenId) -> f64 {
        self.salience[head][token as usize]
    }

    /// Causal attention matrix of the prefill for one head.
    pub fn prefill_matrix(&self, head: usize) -> Vec<Vec<f64>> {
        let n = self.spec.prefill;
        let w = &self.salience[head];
        let mut z = 0.0;
        (0..n)
            .map(|i| {
                z += w[i];
                (0..n).map(|j| if j <= i { w[j] / z } else { 0.0 }).collect()
            })
            .collect()
    }

    /// Column sums of `prefill_matrix(head)` without materializing it.
    pub fn prefill_scores(&self, head: usize) -> Vec<f64> {
        let n = self.spec.prefill;
        let w = &self.salience[head];
        let mut inv_z = Vec::with_capacity(n);
        let mut z = 0.0;
        for wi in &w[..n] {
            z += wi;
            inv_z.push(1.0 / z);
        }
        let mut suffix = 0.0;
        let mut out = vec![0.0; n];
        for j in (0..n).rev() {
            suffix += inv_z[j];
            out[j] = w[j] * suffix;
        }
        out
    }

    /// Attention of `new` over `resident` (in the given order) and itself, last.
    pub fn decode_row_into(&self, head: usize, resident: &[TokenId], new: TokenId, row: &mut Vec<f64>) {
        let w = &self.salience[head];
        row.clear();
        row.extend(resident.iter().map(|&t| w[t as usize]));
        row.push(w[new as usize]);
        let z: f64 = row.iter().sum();
        for a in row.iter_mut() {
            *a /= z;
        }
    }

    pub fn decode_row(&self, head: usize, resident: &[TokenId], new: TokenId) -> Vec<f64> {
        let mut row = Vec::with_capacity(resident.len() + 1);
        self.decode_row_into(head, resident, new, &mut row);
        row
    }

    /// Row of the last token over the whole uncompressed sequence.
    pub fn full_row(&self, head: usize) -> Vec<f64> {
        let w = &self.salience[head];
        let z: f64 = w.iter().sum();
        w.iter().map(|x| x / z).collect()
    }
}

/// Small fixed-point projection weights for numeric paths (K/V recompute,
/// output mixing). Entries are N(0, 1/C) rounded to Q8.8.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub shape: ModelShape,
    pub w_q: FixedMatrix,
    pub w_k: FixedMatrix,
    pub w_v: FixedMatrix,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeStep {
    pub token: TokenId,
    pub x: Vec<Value16>,
    pub q: Vec<Vec<f64>>,
    pub k: Vec<Vec<Value16>>,
    pub v: Vec<Vec<Value16>>,
}

impl ToyModel {
    pub fn new(shape: ModelShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        if shape.channels > 1024 {
            return Err(config_err("toy projections are limited to 1024 channels"));
        }
        let c = shape.channels;
        let rng = SimRng::new(seed);
        let normal = Normal::new(0.0, 1.0 / (c as f64).sqrt()).expect("valid normal");
        let matrix = |which: u64| {
            let mut s = rng.stream(&[TOY_MATRIX_STREAM, which]);
            let data = (0..c * c).map(|_| Value16::from_f64(normal.sample(&mut s))).collect();
            FixedMatrix::new(c, c, data).expect("square")
        };
        Ok(Self {
            shape,
            w_q: matrix(0),
            w_k: matrix(1),
            w_v: matrix(2),
            seed,
        })
    }

    /// Layer input of token `t`, entries N(0, 1).
    pub fn input_vector(&self, t: TokenId) -> Vec<Value16> {
        let mut s = SimRng::new(self.seed).stream(&[TOY_INPUT_STREAM, t as u64]);
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        (0..self.shape.channels)
            .map(|_| Value16::from_f64(normal.sample(&mut s)))
            .collect()
    }

    pub fn step(&self, t: TokenId) -> DecodeStep {
        let x = self.input_vector(t);
        let hd = self.shape.head_dim();
        let per_head = |m: &FixedMatrix| -> Vec<Vec<Value16>> {
            m.left_multiply(&x)
                .expect("x has C entries")
                .chunks(hd)
                .map(<[Value16]>::to_vec)
                .collect()
        };
        let q = per_head(&self.w_q)
            .into_iter()
            .map(|h| h.into_iter().map(Value16::to_f64).collect())
            .collect();
        let k = per_head(&self.w_k);
        let v = per_head(&self.w_v);
        DecodeStep { token: t, x, q, k, v }
    }

    /// Steps for tokens `first..first + count`.
    pub fn steps(&self, first: TokenId, count: usize) -> impl Iterator<Item = DecodeStep> + '_ {
        (first..first + count as TokenId).map(move |t| self.step(t))
    }
}
