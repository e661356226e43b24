//! Seed derivation and the few random variates the simulators need.
//!
//! Every stochastic object is driven by a `ChaCha8Rng` whose seed is derived
//! from a master seed, a purpose tag and a replicate index. Replicates can
//! therefore run in any order (or in parallel) and still reproduce bit-exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Purpose tags keep the streams of different consumers apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Field = 1,
    Process = 2,
    Graphical = 3,
    Paths = 4,
    Walks = 5,
}

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for replicate `index` of stream `tag` under `master`.
pub fn derive_seed(master: u64, tag: Stream, index: u64) -> u64 {
    let a = mix64(master.wrapping_add(GOLDEN_GAMMA.wrapping_mul(tag as u64)));
    mix64(a ^ mix64(index.wrapping_add(GOLDEN_GAMMA)))
}

pub fn stream(master: u64, tag: Stream, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, tag, index))
}

/// The `index`-th output of a SplitMix64 generator seeded with `seed`,
/// mapped to a uniform in [0, 1). Counter-based, so any vertex's draw can be
/// produced without generating the ones before it.
#[inline]
pub fn uniform_at(seed: u64, index: u64) -> f64 {
    let z = mix64(seed.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))));
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Unit-rate exponential by inversion.
#[inline]
pub fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln()
}

/// Exponential with the given positive rate.
#[inline]
pub fn exp_rate<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    exp1(rng) / rate
}
