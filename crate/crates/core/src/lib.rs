//! KV-cache policy and eDRAM memory simulator for edge LLM decoding.

// `!(x > 0.0)` is used on purpose so NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aerp;
pub mod attention;
pub mod cli;
pub mod edram;
pub mod error;
pub mod microarch;
pub mod perfmodel;
pub mod primitives;
pub mod workload;

pub use error::{Error, FieldError, Result};
