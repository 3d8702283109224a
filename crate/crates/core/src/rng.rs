//! Named random sub-streams derived from a single pipeline seed.
//!
//! Every stochastic component draws from its own stream (`"iforest"`,
//! `"mlp"`, `"jitter"`, ...) so changing how one component consumes
//! randomness never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const STREAM_IFOREST: &str = "iforest";
pub const STREAM_MLP: &str = "mlp";
pub const STREAM_JITTER: &str = "jitter";

/// Derives a 64-bit seed from the root seed and a path of labels.
pub fn derive_seed(root: u64, labels: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(root: u64, labels: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, labels))
}
