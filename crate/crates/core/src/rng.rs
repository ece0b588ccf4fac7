//! Seed derivation.
//!
//! Every stochastic operation takes an explicit 64-bit seed. Sub-seeds for
//! users, realizations, restarts and sweep points are derived by folding a
//! list of integer tags into the base seed with SplitMix64, so that
//! `derive_seed(s, &[a, b])` is stable across runs, platforms and thread
//! counts.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha12Rng;

/// Tag namespaces used when deriving sub-seeds.
pub mod stream {
    pub const CHANNEL_MODEL: u64 = 1;
    pub const CHANNEL_SAMPLE: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const FIXED_POINT: u64 = 4;
    pub const RESTART: u64 = 5;
    pub const EXACT_MC: u64 = 6;
    pub const SWEEP_POINT: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and an ordered list of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Standard circularly-symmetric complex Gaussian, E|w|^2 = 1.
pub fn complex_gaussian(rng: &mut Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Matrix of i.i.d. standard complex Gaussian entries, filled row by row.
pub fn complex_gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<Complex64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = complex_gaussian(rng);
        }
    }
    m
}
