//! Seeding conventions.
//!
//! Every random stream in the crate is a ChaCha8 generator. Streams that must
//! not depend on scheduling (per seed, per test, per fold) get their own seed,
//! derived by hashing a master seed together with a textual label. The
//! derivation is SHA-256 over `"{master}/{label}"`, first eight bytes read
//! little-endian, so it is stable across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive_seed(master: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{master}/{label}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn derived(master: u64, label: &str) -> Rng {
    seeded(derive_seed(master, label))
}

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
