//! Deterministic seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a master seed with any number of indices into a child seed.
pub fn derive(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(master), |acc, p| {
        splitmix64(acc ^ splitmix64(*p))
    })
}

/// Independent random stream for `role` and `index` under `seed`.
pub fn stream(seed: u64, role: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[role]));
    rng.set_stream(index);
    rng
}
