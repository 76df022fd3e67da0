//! Seeded randomness.
//!
//! Every stochastic operation takes an explicit `u64` seed and draws from
//! [`ChaCha8Rng`], whose output stream is specified independently of platform
//! and word size. Sub-streams are derived with a SplitMix64 finalizer so that
//! e.g. the perturbation for unlabeled point `j` at selection round `r` does not
//! depend on how many other points were processed first.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for `(stream, index)` under `base`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(stream)) ^ index)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Fills a vector of length `dim` with i.i.d. `N(0, sigma^2)` draws.
pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim).map(|_| sigma * standard_normal(rng)).collect()
}

/// Named sub-streams, so derived seeds for different purposes never collide.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const SELECT: u64 = 3;
    pub const UNLABELED_POINT: u64 = 4;
    pub const MASK: u64 = 5;
    pub const SAMPLE: u64 = 6;
    pub const PAIRING: u64 = 7;
    pub const DATA: u64 = 8;
}
