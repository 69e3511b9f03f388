//! Counter-based seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a hash of
//! `(base seed, stream tag, indices...)`, so results never depend on the order
//! in which independent work items are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Mixes a seed, a stream tag and a list of counters into a new seed.
pub fn derive_seed(seed: u64, tag: &str, counters: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ tag_hash(tag));
    for &c in counters {
        h = splitmix64(h ^ c);
    }
    h
}

/// A fresh generator for the given stream.
pub fn stream(seed: u64, tag: &str, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, counters))
}
