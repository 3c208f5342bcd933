//! Seeded RNG streams. ChaCha8 gives identical draws on every platform, which
//! the bitwise-reproducibility guarantees depend on.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream `stream` of the generator seeded with `seed`. Streams
/// never overlap, so init, shuffling, and data synthesis can share one seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
