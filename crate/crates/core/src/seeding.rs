//! Stable hashing and seed derivation.
//!
//! Every random stream in the pipeline is a ChaCha8 generator whose seed is
//! derived from the master seed and a stage label, so stages never share or
//! perturb each other's streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// 64-bit hash of a sequence of byte strings. Stable across platforms and releases.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

pub fn derive_seed(master: u64, stage: &str) -> u64 {
    stable_hash(&[&master.to_le_bytes(), stage.as_bytes()])
}

/// Seed for the `index`-th item of a stage stream.
pub fn derive_indexed_seed(stage_seed: u64, index: u64) -> u64 {
    stable_hash(&[&stage_seed.to_le_bytes(), &index.to_le_bytes()])
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
