//! The single seeded generator every stochastic component draws from.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

/// Generator type threaded through agents, buffers and training loops.
pub type FolioRng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> FolioRng {
    FolioRng::seed_from_u64(seed)
}

#[inline]
pub fn standard_normal(rng: &mut FolioRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Fills `out` with independent N(0, 1) draws.
pub fn fill_standard_normal(rng: &mut FolioRng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = standard_normal(rng);
    }
}

pub fn uniform(rng: &mut FolioRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}
