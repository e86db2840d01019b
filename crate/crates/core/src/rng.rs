//! Seeded RNG construction and per-item seed derivation.
//!
//! Every stochastic step in the workspace draws from a ChaCha8 stream built
//! here, so a (config, seed) pair fully determines all outputs.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent seed from a base seed and a stream/index pair
/// (splitmix64 finalizer over the mixed words).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(7, 1, 0);
        let b = derive_seed(7, 1, 1);
        let c = derive_seed(7, 2, 0);
        assert_eq!(a, derive_seed(7, 1, 0));
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rng_streams_reproduce() {
        let mut r1 = rng_from_seed(42);
        let mut r2 = rng_from_seed(42);
        let a: Vec<u32> = (0..8).map(|_| r1.random()).collect();
        let b: Vec<u32> = (0..8).map(|_| r2.random()).collect();
        assert_eq!(a, b);
    }
}
