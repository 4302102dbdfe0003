//! Seed derivation. Every stochastic stage draws from a ChaCha stream keyed by
//! a seed derived from stable indices, never from scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with a sequence of indices into a new seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &p| {
        splitmix64(acc ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)))
    })
}

pub fn rng_from_seed(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Independent stream sharing `rng`'s key, obtained without consuming `rng`.
pub fn side_stream(rng: &SeededRng, lane: u64) -> SeededRng {
    let mut side = SeededRng::from_seed(rng.get_seed());
    side.set_stream(rng.get_stream() ^ (lane.wrapping_mul(0xA24B_AED4_963E_E407) | 1));
    side
}
