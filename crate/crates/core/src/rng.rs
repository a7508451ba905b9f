//! Seeded random streams. Every consumer takes its generator explicitly;
//! there is no global state.

use alloc::vec::Vec;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Real;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent stream `stream` under `seed`. Used to derive per-step and
/// per-item generators so that work can be resumed or reordered without
/// changing the numbers drawn.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal<T: Real>(rng: &mut Rng) -> T {
    T::lit(rng.sample::<f64, _>(StandardNormal))
}

pub fn normals<T: Real>(rng: &mut Rng, n: usize) -> Vec<T> {
    (0..n).map(|_| normal(rng)).collect()
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}
