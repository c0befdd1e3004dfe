//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from one master
//! seed and a subsystem name: `splitmix64(seed ^ fnv1a64(name))`. ChaCha output is
//! specified independently of platform, so runs reproduce across machines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for the named subsystem.
pub fn derive_seed(master: u64, subsystem: &str) -> u64 {
    splitmix64(master ^ fnv1a64(subsystem.as_bytes()))
}

/// Generator for the named subsystem.
pub fn stream(master: u64, subsystem: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(master, subsystem))
}
