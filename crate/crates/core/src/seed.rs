//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from a
//! 64-bit value, and child seeds are derived with splitmix64 so that the
//! stream of member `t` never depends on how many other members exist or
//! on the order in which they are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed of child stream `index` from `parent`.
pub fn derive(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index))
}

/// Named sub-streams of one seed, so that e.g. weight init and minibatch
/// shuffling never share random numbers.
pub fn derive_named(parent: u64, name: &str) -> u64 {
    let tag = name
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
        });
    derive(parent, tag)
}

/// Hash of a feature vector by its exact bit patterns.
pub fn hash_features(x: &[f64]) -> u64 {
    x.iter()
        .fold(splitmix64(x.len() as u64), |h, v| splitmix64(h ^ v.to_bits()))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
