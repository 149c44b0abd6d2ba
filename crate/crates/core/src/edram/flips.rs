use rand::Rng;
use rand_distr::{Distribution, Geometric};

use super::refresh::BitPlane;
use super::retention::RetentionModel;
use crate::primitives::Value16;

/// Visit each of `n_bits` positions independently with probability `p`.
///
/// Draws a geometric gap between hits, so cost scales with the number of hits
/// rather than the number of bits.
pub fn sample_positions<R, F>(n_bits: u64, p: f64, rng: &mut R, mut hit: F)
where
    R: Rng + ?Sized,
    F: FnMut(u64),
{
    if !(p > 0.0) || n_bits == 0 {
        return;
    }
    let gap = Geometric::new(p.min(1.0)).expect("probability in (0, 1]");
    let mut pos = gap.sample(rng);
    while pos < n_bits {
        hit(pos);
        pos = pos.saturating_add(1).saturating_add(gap.sample(rng));
    }
}

/// Flip each bit of the chosen plane independently with probability `p`.
///
/// Calls `on_flip(word index, bit in word)` for every flip and returns the count.
pub fn flip_plane_bits<R, F>(words: &mut [Value16], plane: BitPlane, p: f64, rng: &mut R, mut on_flip: F) -> u64
where
    R: Rng + ?Sized,
    F: FnMut(usize, u32),
{
    let mut flips = 0;
    sample_positions(words.len() as u64 * 8, p, rng, |pos| {
        let word = (pos / 8) as usize;
        let bit = (pos % 8) as u32 + plane.shift();
        words[word] = words[word].flip_bit(bit);
        on_flip(word, bit);
        flips += 1;
    });
    flips
}

/// Retention failures in one plane after `elapsed_s` without refresh.
/// Nothing flips (and no randomness is consumed) at zero elapsed time.
pub fn inject_flips<R: Rng + ?Sized>(
    words: &mut [Value16],
    plane: BitPlane,
    elapsed_s: f64,
    model: &RetentionModel,
    rng: &mut R,
) -> u64 {
    let p = model.failure_rate(elapsed_s);
    flip_plane_bits(words, plane, p, rng, |_, _| {})
}
