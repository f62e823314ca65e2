//! Seeded random streams.
//!
//! Every run has one root seed. Modules draw from named sub-streams so that,
//! for example, changing how many negatives are sampled never shifts the
//! parameter initialisation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Named sub-streams fanned out from a root seed.
pub mod stream {
    pub const DATASET: &str = "dataset";
    pub const INIT: &str = "init";
    pub const SAMPLING: &str = "sampling";
    pub const CLASSIFIER: &str = "classifier";
}

pub fn substream(root_seed: u64, name: &str) -> Rng {
    let mut key = root_seed.to_le_bytes().to_vec();
    key.extend_from_slice(name.as_bytes());
    ChaCha8Rng::seed_from_u64(fnv1a64(&key))
}
