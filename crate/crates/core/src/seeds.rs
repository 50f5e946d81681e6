//! Deterministic derivation of independent RNG streams from one experiment
//! seed. Every consumer of randomness gets its own pre-derived stream, so
//! parallel scheduling cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels; each (seed, label, parts...) tuple maps to one stream.
pub mod stream {
    pub const DATA: u64 = 0x01;
    pub const SHARD: u64 = 0x02;
    pub const INIT: u64 = 0x03;
    pub const ADVERSARY: u64 = 0x04;
    pub const CLIENT_ROUND: u64 = 0x05;
    pub const SELECTION: u64 = 0x06;
    pub const SPLIT: u64 = 0x07;
}

/// SplitMix64 finalizer; full-period bijection on u64.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Folds the parts into one well-mixed 64-bit value.
pub fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x243F6A8885A308D3u64; // arbitrary non-zero start
    for &p in parts {
        acc = splitmix(acc ^ splitmix(p));
    }
    acc
}

/// A ChaCha stream for the given derivation path.
pub fn rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

/// Stream feeding a client's local work (training shuffle or Byzantine
/// perturbation) in one round.
pub fn client_round(seed: u64, round: usize, client: usize) -> u64 {
    mix(&[seed, stream::CLIENT_ROUND, round as u64, client as u64])
}
