//! Counter-based pseudo-randomness for chain steps.
//!
//! The draw at step `t` of a run is a pure function of `(seed, t)`: three
//! 64-bit words come out of the SplitMix64 finalizer applied to
//! `seed + (3t + j) * GOLDEN` for `j = 0, 1, 2`. This makes every trajectory
//! reproducible and seekable, and lets replicas share nothing but a seed
//! derivation rule: replica `k` of a master seed runs on `mix(master + k*GOLDEN)`.

use crate::dynamics::MoveDraw;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn word(seed: u64, counter: u64) -> u64 {
    mix(seed
        .wrapping_add(counter.wrapping_mul(GOLDEN))
        .wrapping_add(GOLDEN))
}

/// Seed for the `k`-th replica of a master seed.
pub fn replica_seed(master: u64, k: u64) -> u64 {
    word(master, k)
}

/// The move draw driving step `t` of the chain with `alpha` rays.
///
/// Ray selection multiplies a full word down to `[0, alpha)`; the selection
/// bias is below `alpha * 2^-64`. `p` is a dyadic rational strictly inside
/// `(0, 1)` built from 53 bits, so `p <= 1/lambda` is exact for `lambda = 1`
/// and deviates from the ideal rate by at most `2^-53` otherwise.
pub fn draw_at(seed: u64, t: u64, alpha: usize) -> MoveDraw {
    let w_ray = word(seed, 3 * t);
    let w_bit = word(seed, 3 * t + 1);
    let w_p = word(seed, 3 * t + 2);
    let ray = ((w_ray as u128 * alpha as u128) >> 64) as u32;
    let up = w_bit & 1 == 1;
    let p = ((w_p >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    MoveDraw { ray, up, p }
}

/// Stateful wrapper over [`draw_at`] that tracks the step counter.
#[derive(Clone, Debug)]
pub struct DrawStream {
    seed: u64,
    t: u64,
}

impl DrawStream {
    pub fn new(seed: u64) -> Self {
        DrawStream { seed, t: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step_index(&self) -> u64 {
        self.t
    }

    pub fn next_draw(&mut self, alpha: usize) -> MoveDraw {
        let d = draw_at(self.seed, self.t, alpha);
        self.t += 1;
        d
    }
}
