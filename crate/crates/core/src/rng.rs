//! Seeded, splittable randomness. Every stochastic path takes an explicit
//! seed; child seeds are derived by mixing a parent seed with a stream tag.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StagRng = ChaCha8Rng;

pub fn rng(seed: u64) -> StagRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `stream` under `seed`.
pub fn derive(seed: u64, stream: u64) -> u64 {
    mix(mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)) ^ stream.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Child seed for a named purpose, e.g. `derive_named(seed, "init")`.
pub fn derive_named(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name
    let tag = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    derive(seed, tag)
}
