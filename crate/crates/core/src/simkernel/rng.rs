//! Portable seeded randomness.
//!
//! Every consumer draws from its own named substream. The substream key is
//! `SHA-256("acat-rng-v1" || seed as little-endian u64 || label bytes)`, used
//! directly as the 256-bit key of a ChaCha20 generator (`rand_chacha`,
//! stream 0, counter 0). Both primitives are platform independent, so a
//! `(seed, label)` pair yields the same bits everywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha20Rng;

const DOMAIN: &[u8] = b"acat-rng-v1";

pub fn substream_key(seed: u64, label: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN);
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.finalize().into()
}

pub fn random_stream(seed: u64, label: &str) -> StreamRng {
    ChaCha20Rng::from_seed(substream_key(seed, label))
}
