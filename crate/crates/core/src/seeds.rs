//! Deterministic seed derivation.
//!
//! Every stochastic component draws from its own stream seeded by
//! `derive(master_seed, component_label)`. Component streams are therefore
//! independent of each other and of chunking, and a whole run is reproducible
//! from the single master seed recorded in the manifest.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

pub fn derive(master_seed: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

pub fn rng_for(master_seed: u64, label: &str) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(derive(master_seed, label))
}
