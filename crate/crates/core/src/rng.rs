//! Seed derivation and the few distributions the models need.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = ChaCha8Rng;

/// SplitMix64 finalizer; mixes a seed with a stream tag.
pub fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64, tag: u64) -> SeededRng {
    SeededRng::seed_from_u64(mix(seed, tag))
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Normal with standard deviation `sigma`, resampled outside ±2σ.
pub fn trunc_normal(rng: &mut impl Rng, sigma: f64) -> f64 {
    loop {
        let z = normal(rng);
        if z.abs() <= 2.0 {
            return z * sigma;
        }
    }
}

/// Uniform index in `0..n` (n > 0).
pub fn below(rng: &mut impl Rng, n: usize) -> usize {
    rng.random_range(0..n)
}

pub fn unit(rng: &mut impl Rng) -> f64 {
    rng.random::<f64>()
}

/// Fisher–Yates shuffle.
pub fn shuffle<X>(rng: &mut impl Rng, xs: &mut [X]) {
    for i in (1..xs.len()).rev() {
        let j = rng.random_range(0..=i);
        xs.swap(i, j);
    }
}
