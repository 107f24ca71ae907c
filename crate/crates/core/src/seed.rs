//! Sub-seed derivation.
//!
//! Every stochastic step draws from its own generator seeded by
//! `(run seed, operation, item id)`, so an item's output does not depend on
//! how many items were processed before it or in which order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(run_seed: u64, operation: &str, item: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(run_seed.to_le_bytes());
    hasher.update(operation.as_bytes());
    hasher.update([0u8]);
    hasher.update(item.as_bytes());
    let digest = hasher.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

/// Generator used throughout the crate; ChaCha output is platform independent.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(run_seed: u64, operation: &str, item: &str) -> ChaCha8Rng {
    rng_from(derive_seed(run_seed, operation, item))
}
