//! Seed derivation. Every stochastic stage draws from its own ChaCha stream
//! keyed by `(master seed, stage label, index)`, so results never depend on
//! scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

/// Derive a child seed from a parent seed, a stage label and an index.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stage_rng(seed: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(seed)
}
