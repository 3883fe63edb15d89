//! Hierarchical seed derivation.
//!
//! A child seed is `mix(parent ^ mix(index + 1))` where `mix` is the
//! SplitMix64 output function applied after adding the golden-ratio
//! increment. Paths fold left, so `derive(s, &[a, b]) == child(child(s, a), b)`.
//! Generators are `ChaCha8Rng::seed_from_u64(seed)`.
//!
//! Streams used by the crate:
//!
//! | stream                      | path from the base seed           |
//! |-----------------------------|-----------------------------------|
//! | MDP `i` of an experiment    | `base + i` (no mixing)            |
//! | behavior / target policies  | `[POLICY, k]` from the MDP seed   |
//! | trajectory                  | `[TRAJECTORY, rep, start, index]` |
//! | online actor-critic         | `[ONLINE, iteration]`             |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const POLICY: u64 = 1;
pub const TRAJECTORY: u64 = 2;
pub const ONLINE: u64 = 3;
pub const AUDIT: u64 = 4;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn child(parent: u64, index: u64) -> u64 {
    mix(parent ^ mix(index.wrapping_add(1)))
}

pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |s, &i| child(s, i))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference SplitMix64 generator seeded with 0.
        assert_eq!(mix(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(mix(GOLDEN), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn paths_fold() {
        assert_eq!(derive(7, &[1, 2]), child(child(7, 1), 2));
        assert_eq!(derive(7, &[]), 7);
    }

    #[test]
    fn siblings_differ() {
        let kids: std::collections::HashSet<u64> = (0..1000).map(|i| child(42, i)).collect();
        assert_eq!(kids.len(), 1000);
        assert_ne!(child(1, 2), child(2, 1));
    }
}
