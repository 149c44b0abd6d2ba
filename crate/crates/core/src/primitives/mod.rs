//! Shared value types: Q8.8 words and their bit planes, 4-bit score codes,
//! model geometry and the seeded random source.

mod fixed;
mod rng;
mod score;
mod shape;

pub use fixed::{merge_bits, split_bits, FixedMatrix, Value16, FRAC_BITS};
pub use rng::{derive_seed, splitmix64, SimRng};
pub use score::{quantize4, ImportanceScore, ScoreQuantizer, SCORE_MAX_CODE};
pub use shape::{default_ffn_dim, ModelShape};
