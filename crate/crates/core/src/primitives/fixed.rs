//! 16-bit fixed-point storage values and their bit-plane split.
//!
//! KV and input vectors are held as Q8.8 two's-complement words. The high
//! byte (bits 15..8) and low byte (bits 7..0) live in separate eDRAM bank
//! groups so that each plane can be refreshed on its own schedule.

use serde::{Deserialize, Serialize};

/// Fractional bits of the Q8.8 format.
pub const FRAC_BITS: u32 = 8;
const ONE: f64 = (1u32 << FRAC_BITS) as f64;

/// A Q8.8 two's-complement value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Value16(i16);

impl Value16 {
    pub const ZERO: Value16 = Value16(0);

    pub const fn from_raw(raw: i16) -> Self {
        Value16(raw)
    }

    pub const fn from_bits(bits: u16) -> Self {
        Value16(bits as i16)
    }

    pub const fn raw(self) -> i16 {
        self.0
    }

    pub const fn bits(self) -> u16 {
        self.0 as u16
    }

    /// Nearest representable value, ties to even, saturating at the Q8.8 range.
    pub fn from_f64(x: f64) -> Self {
        if x.is_nan() {
            return Value16::ZERO;
        }
        let scaled = (x * ONE).round_ties_even();
        Value16(scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / ONE
    }

    pub const fn msb(self) -> u8 {
        (self.bits() >> 8) as u8
    }

    pub const fn lsb(self) -> u8 {
        self.bits() as u8
    }

    /// Flip one bit (0 = least significant).
    pub const fn flip_bit(self, bit: u32) -> Self {
        Value16::from_bits(self.bits() ^ (1u16 << bit))
    }
}

/// Split a value into its (MSB, LSB) planes.
pub const fn split_bits(v: Value16) -> (u8, u8) {
    (v.msb(), v.lsb())
}

pub const fn merge_bits(msb: u8, lsb: u8) -> Value16 {
    Value16::from_bits(((msb as u16) << 8) | lsb as u16)
}

/// Round a Q16.16 accumulator back to Q8.8 (ties to even, saturating).
fn requantize_q16(acc: i64) -> Value16 {
    let shift = FRAC_BITS as i64;
    let half = 1i64 << (shift - 1);
    let floor = acc.div_euclid(1 << shift);
    let rem = acc.rem_euclid(1 << shift);
    let rounded = match rem.cmp(&half) {
        std::cmp::Ordering::Less => floor,
        std::cmp::Ordering::Greater => floor + 1,
        std::cmp::Ordering::Equal => {
            if floor % 2 == 0 {
                floor
            } else {
                floor + 1
            }
        }
    };
    Value16(rounded.clamp(i16::MIN as i64, i16::MAX as i64) as i16)
}

/// A dense row-major matrix of Q8.8 values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Value16>,
}

impl FixedMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Value16>) -> crate::Result<Self> {
        if data.len() != rows * cols {
            return Err(crate::error::config_err(format!(
                "matrix data has {} elements, expected {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Value16::ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Value16::from_raw(1 << FRAC_BITS);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Value16 {
        self.data[r * self.cols + c]
    }

    /// Row vector times matrix, accumulated exactly in integers and rounded once.
    pub fn left_multiply(&self, x: &[Value16]) -> crate::Result<Vec<Value16>> {
        if x.len() != self.rows {
            return Err(crate::error::config_err(format!(
                "vector of length {} cannot multiply a {}x{} matrix",
                x.len(),
                self.rows,
                self.cols
            )));
        }
        let mut acc = vec![0i64; self.cols];
        for (r, xv) in x.iter().enumerate() {
            let xr = xv.raw() as i64;
            if xr == 0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (a, w) in acc.iter_mut().zip(row) {
                *a += xr * w.raw() as i64;
            }
        }
        Ok(acc.into_iter().map(requantize_q16).collect())
    }
}
