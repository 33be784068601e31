//! Deterministic seed derivation.
//!
//! Seeds for independent jobs are derived by hashing their identifying
//! parts, so results do not depend on scheduling order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Hashes an experiment seed together with labelled parts into a new seed.
pub fn derive_seed(base: u64, parts: &[&dyn SeedPart]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for part in parts {
        part.feed(&mut hasher);
        hasher.update([0xff]);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub trait SeedPart {
    fn feed(&self, hasher: &mut Sha256);
}

impl SeedPart for str {
    fn feed(&self, hasher: &mut Sha256) {
        hasher.update(self.as_bytes());
    }
}

impl SeedPart for &str {
    fn feed(&self, hasher: &mut Sha256) {
        hasher.update(self.as_bytes());
    }
}

impl SeedPart for String {
    fn feed(&self, hasher: &mut Sha256) {
        hasher.update(self.as_bytes());
    }
}

impl SeedPart for u64 {
    fn feed(&self, hasher: &mut Sha256) {
        hasher.update(self.to_le_bytes());
    }
}

impl SeedPart for usize {
    fn feed(&self, hasher: &mut Sha256) {
        hasher.update((*self as u64).to_le_bytes());
    }
}

/// Hex SHA-256 of a byte slice; used for dataset and artifact fingerprints.
pub fn fingerprint(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
