//! Seed derivation. Every random choice in the pipeline draws from a
//! ChaCha stream seeded by hashing a parent seed with scope labels, so
//! results never depend on iteration or thread order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Child seed of `parent` for the given scope labels.
pub fn derive_seed(parent: u64, scope: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    for label in scope {
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 digest is 32 bytes"))
}

pub fn scoped_rng(parent: u64, scope: &[&str]) -> Rng {
    Rng::seed_from_u64(derive_seed(parent, scope))
}
