//! Seed derivation. Every random stream in the toolkit is a ChaCha8
//! generator keyed by a master seed plus a small tuple of indices, so
//! serial and parallel execution consume identical streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Environment variable consulted for a global seed fallback.
pub const SEED_ENV: &str = "FSOS_SEED";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a stream path into a new 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .enumerate()
        .fold(splitmix64(master), |acc, (i, &p)| {
            let salt = 0xD6E8_FEB8_6659_FD93u64.wrapping_mul(i as u64 + 1);
            splitmix64(acc ^ splitmix64(p ^ salt))
        })
}

pub fn rng_for(master: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(master, path))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Seed from `FSOS_SEED`, if set and parseable.
pub fn env_seed() -> Option<u64> {
    std::env::var(SEED_ENV).ok()?.trim().parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derived_streams_are_stable_and_distinct() {
        let a: u64 = rng_for(7, &[1, 2]).random();
        let b: u64 = rng_for(7, &[1, 2]).random();
        let c: u64 = rng_for(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(derive_seed(0, &[0]), derive_seed(0, &[]));
    }
}
