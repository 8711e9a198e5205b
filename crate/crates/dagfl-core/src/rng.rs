//! Seed derivation for deterministic, purpose-scoped random streams.
//!
//! Every source of randomness in a run is a ChaCha8 stream derived from the
//! master seed and a string tag (`"partition"`, `"train/c3/t17"`, ...), so
//! adding a new consumer never perturbs existing streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Deterministic RNG for `(master seed, tag)`.
pub fn stream(master: u64, tag: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    let seed: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(seed)
}
