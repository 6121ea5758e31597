//! Seeded random streams.
//!
//! All randomness goes through ChaCha8, a counter-based generator whose output
//! is identical across platforms for a given seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifier written into run manifests.
pub const RNG_ALGORITHM: &str = "chacha8";

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream derived from `(seed, stream)`; used to give each job of a
/// sweep its own generator.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
