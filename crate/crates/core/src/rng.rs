//! Reproducible randomness.
//!
//! All randomness in the toolkit flows from a single `u64` seed through
//! per-sample ChaCha streams. Stream `i+1` is dedicated to Monte Carlo
//! sample `i`, stream 0 to any global draws of a run, so results are
//! bit-identical regardless of how samples are scheduled across workers.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream dedicated to one Monte Carlo sample.
pub fn sample_stream(seed: u64, sample: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample.wrapping_add(1));
    rng
}

/// Stream for draws not tied to a particular sample.
pub fn global_stream(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0u64);
    rng
}

/// Derive an independent sub-seed, e.g. for a nested run.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    // SplitMix64 step on seed^label; cheap and well-diffused.
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}
