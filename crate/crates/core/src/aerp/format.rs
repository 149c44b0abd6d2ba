use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::primitives::{FixedMatrix, ModelShape, Value16};

/// How a cached token is held in the KV eDRAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageFormat {
    /// Per-head K and V vectors, each element split into MSB/LSB planes.
    KvSplit,
    /// The token's layer input `x` (length C), shared by all heads.
    InputVector,
}

/// Input-vector storage iff the token is resident in a strict majority of heads.
pub fn choose_format(residency: &[bool]) -> StorageFormat {
    let resident = residency.iter().filter(|&&r| r).count();
    if 2 * resident > residency.len() {
        StorageFormat::InputVector
    } else {
        StorageFormat::KvSplit
    }
}

/// Bytes of 16-bit K and V for a token resident in `resident_heads` heads.
pub fn bytes_kv_split(shape: &ModelShape, resident_heads: usize) -> u64 {
    (resident_heads * 2 * shape.head_dim() * 2) as u64
}

/// Bytes of a 16-bit input vector.
pub fn bytes_input_vector(shape: &ModelShape) -> u64 {
    (2 * shape.channels) as u64
}

/// One vector per head.
pub type PerHead = Vec<Vec<Value16>>;

/// Rebuild per-head K and V from a stored input vector.
///
/// Uses the same integer accumulation and single rounding as the original
/// projection, so the result is bit-identical to what was first computed.
pub fn recompute_kv(
    x: &[Value16],
    w_k: &FixedMatrix,
    w_v: &FixedMatrix,
    heads: usize,
) -> Result<(PerHead, PerHead)> {
    let c = x.len();
    for (name, w) in [("W_K", w_k), ("W_V", w_v)] {
        if w.rows() != c || w.cols() != c {
            return Err(config_err(format!(
                "{name} is {}x{}, expected {c}x{c}",
                w.rows(),
                w.cols()
            )));
        }
    }
    if heads == 0 || !c.is_multiple_of(heads) {
        return Err(config_err(format!("{heads} heads do not divide {c} channels")));
    }
    let hd = c / heads;
    let split = |v: Vec<Value16>| v.chunks(hd).map(<[Value16]>::to_vec).collect::<Vec<_>>();
    Ok((split(w_k.left_multiply(x)?), split(w_v.left_multiply(x)?)))
}
