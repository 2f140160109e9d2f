//! Seedable, splittable random number generation.
//!
//! Every stochastic component takes its randomness from a named substream of a
//! counter-based generator, so distinct replications can run concurrently and
//! still reproduce bit-identically.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Returns the generator for substream `stream` of the experiment seed.
///
/// ChaCha keeps independent streams addressable by a 64-bit stream id, so each
/// replication (or Monte-Carlo estimator) gets its own stream without any
/// coordination between threads.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.into());
    rng
}
