//! Seed derivation.
//!
//! Every random stream in the crate is seeded from one master seed combined
//! with a component label, so a single number reproduces a whole run and
//! adding a new consumer never shifts the streams of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derive a child seed from `master` and a component label.
pub fn derive(master: u64, component: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(component.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Derive a child seed from `master`, a label and an integer coordinate.
pub fn derive_indexed(master: u64, component: &str, index: u64) -> u64 {
    derive(master, &format!("{component}#{index}"))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
