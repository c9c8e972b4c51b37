//! Deterministic seed derivation.
//!
//! Every random stream in the crate comes from a single master seed. A child
//! seed is the first eight bytes (little endian) of
//! `SHA-256(master_le || label || 0x00 || index_0_le || index_1_le || ...)`,
//! so streams are stable across platforms, thread counts and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The random stream type used throughout the crate.
pub type StreamRng = ChaCha8Rng;

pub fn derive_seed(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    for i in indices {
        hasher.update(i.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

pub fn derived_stream(master: u64, label: &str, indices: &[u64]) -> StreamRng {
    stream(derive_seed(master, label, indices))
}
