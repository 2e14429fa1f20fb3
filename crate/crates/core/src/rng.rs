//! Seed handling. Every random quantity in the crate is drawn from a
//! ChaCha8 stream keyed by a 64-bit seed; independent trials use distinct
//! stream ids under the same key, so trial `t` is reproducible on its own and
//! trials can run in any order or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` under key `seed`.
pub fn derived_rng(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
