//! Named sub-seed derivation.
//!
//! Every random stream in an experiment is derived from one root seed and a
//! stage name, so that changing one stage (say, oversampling) never perturbs
//! another (say, CRNN initialization).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG type used throughout the crate.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `root` and a stage `name`.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    let mut h = splitmix64(root);
    for &b in name.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    // length terminator so "ab"+"c" and "a"+"bc" differ when chained
    splitmix64(h ^ (name.len() as u64).rotate_left(32))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn named_rng(root: u64, name: &str) -> Rng {
    rng_from_seed(derive_seed(root, name))
}
