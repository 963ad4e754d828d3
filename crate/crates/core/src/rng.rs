//! Deterministic random streams.
//!
//! Every random decision in the system draws from a stream derived from the
//! run's base seed plus a purpose label (`"init/main"`, `"shuffle/para/3"`,
//! "scheduler", ...). Separate purposes get statistically independent
//! streams, and — crucially — consuming one stream never shifts another, so
//! e.g. disabling an auxiliary task leaves the remaining tasks' draws
//! bit-for-bit unchanged.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x1_0000_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a purpose label into a stream seed.
pub fn derive_seed(base: u64, purpose: &str) -> u64 {
    splitmix64(base ^ fnv1a(purpose.as_bytes()))
}

/// A fresh generator for the given purpose under the given base seed.
pub fn derive_rng(base: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, purpose))
}
