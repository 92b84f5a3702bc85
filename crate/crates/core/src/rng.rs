//! Reproducible random streams keyed by what they are used for.
//!
//! A stream depends only on its key, never on how many draws were made
//! elsewhere, so mask sampling and shuffling do not change with batch
//! composition or evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

/// Stream for `(seed, purpose, epoch, id)`.
pub fn keyed(seed: u64, purpose: &str, epoch: u64, id: &str) -> Stream {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    h.update(epoch.to_le_bytes());
    h.update(id.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}
