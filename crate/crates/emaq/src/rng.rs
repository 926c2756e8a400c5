//! Seed derivation and counter-based random streams.
//!
//! All stochastic components draw from `ChaCha8` streams keyed by a master
//! seed plus a structured key. Deriving a stream from `(seed, key...)` rather
//! than splitting one sequential generator makes every component re-runnable
//! in isolation and gives the trainer its prefix-sampling property: the j-th
//! action sample for a given (step, transition) depends only on its key, so
//! the first N samples are a prefix of the first N' > N samples.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; used to mix key words into a well-spread seed.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a list of key words.
pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    let mut acc = mix(master);
    for (i, k) in keys.iter().enumerate() {
        acc = mix(acc ^ mix(k.wrapping_add(i as u64 + 1)));
    }
    acc
}

/// Named component streams fanned out from one master seed.
/// The string is hashed with FNV-1a so stream identity is stable across runs.
pub fn derive_seed_named(master: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    derive_seed(master, &[h])
}

/// A fresh generator for `(master, keys...)`.
pub fn stream(master: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, keys))
}

/// A fresh generator for a named component.
pub fn named_stream(master: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed_named(master, name))
}
