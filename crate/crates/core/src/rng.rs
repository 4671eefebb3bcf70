//! Seed derivation and counter-based random streams.
//!
//! A master seed fans out to named sub-seeds (`derive(master, "noise")`),
//! and per-element streams are keyed by integer counters so a draw depends
//! only on `(seed, counters)`, never on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes.
pub fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Named sub-seed: `mix64(seed ^ mix64(fnv1a(label)))`.
pub fn derive(seed: u64, label: &str) -> u64 {
    mix64(seed ^ mix64(label_hash(label)))
}

/// Combines a seed with a sequence of counters.
pub fn keyed(seed: u64, counters: &[u64]) -> u64 {
    counters.iter().fold(mix64(seed), |acc, &c| {
        mix64(acc ^ mix64(c.wrapping_add(0x632b_e59b_d9b4_e019)))
    })
}

pub fn stream(seed: u64, counters: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(keyed(seed, counters))
}

pub fn seeded(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
