//! Seeded sampling. Every function here is a pure function of its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const GUMBEL_CLAMP: f64 = 1e-12;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream index, so per-step noise stays
/// independent of how many steps came before.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ stream.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` draws from `Normal(0, std)`.
pub fn normal_init<R: Rng>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// I.i.d. standard Gumbel samples `-ln(-ln u)`, `u` clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn gumbel_noise(shape: &[usize], seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let n: usize = shape.iter().product();
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>().clamp(GUMBEL_CLAMP, 1.0 - GUMBEL_CLAMP);
            -(-u.ln()).ln()
        })
        .collect()
}
