//! Seeded randomness. Every stochastic step draws from a ChaCha stream
//! derived from the caller's seed, so runs are bit-reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for a named sub-task of a seeded run.
pub fn stream(seed: u64, stream: u64) -> StageRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
