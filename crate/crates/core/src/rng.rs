//! Seeded random streams.
//!
//! Every random decision in the crate draws from a [`ChaCha8Rng`] derived from
//! a root seed plus a path of integer labels, so results never depend on
//! thread scheduling or on how many other streams were consumed before.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Labels for the independent streams used by the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Geometry = 1,
    LabelNoise = 2,
    PixelNoise = 3,
    Splits = 4,
    Patches = 5,
    RaterSampling = 6,
    Mining = 7,
    Init = 8,
}

/// Derive a stream from a root seed and a path of labels.
pub fn stream(seed: u64, stream: Stream, path: &[u64]) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((stream as u64).to_le_bytes());
    for p in path {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Stable 64-bit hash of a string, used to turn names into stream labels.
pub fn label(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}
