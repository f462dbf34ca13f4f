//! Seed derivation. Every random draw in the pipeline comes from a ChaCha
//! stream whose seed is derived from the global seed and a stable label, so
//! sharding work differently never changes results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type PipelineRng = ChaCha8Rng;

pub fn derive_seed(global: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

pub fn seeded(seed: u64) -> PipelineRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived(global: u64, label: &str) -> PipelineRng {
    seeded(derive_seed(global, label))
}
