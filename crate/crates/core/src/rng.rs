//! Independent, reproducible random streams keyed by integer tuples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes the key into a single 64-bit seed.
pub fn derive_seed(key: &[u64]) -> u64 {
    key.iter().fold(0x5253_4b41_u64, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(key))
}
