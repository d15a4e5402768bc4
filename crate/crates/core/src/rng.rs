//! Seeded randomness. Every party draws from its own stream derived from the
//! scenario seed, so adding a party never perturbs another party's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::Digest;

pub type SimRng = ChaCha20Rng;

pub fn derive_rng(seed: u64, label: &str, index: u64) -> SimRng {
    let material = Digest::of_parts(&[
        b"qvote/rng",
        &seed.to_be_bytes(),
        label.as_bytes(),
        &index.to_be_bytes(),
    ]);
    ChaCha20Rng::from_seed(material.0)
}
