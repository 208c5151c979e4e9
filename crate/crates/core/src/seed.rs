//! Seed splitting.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a 64-bit
//! value. Child seeds are derived from a parent seed and a list of integer
//! tags by folding each tag through the SplitMix64 finalizer:
//!
//! ```text
//! s = parent
//! for t in tags: s = splitmix64(s ^ splitmix64(t + GOLDEN))
//! ```
//!
//! Streams derived from distinct tag paths are independent for all practical
//! purposes, so frames can be generated in any order (or in parallel) and
//! still be bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` along the tag path `tags`.
pub fn derive_seed(parent: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(parent, |s, &t| {
        splitmix64(s ^ splitmix64(t.wrapping_add(GOLDEN)))
    })
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive_rng(parent: u64, tags: &[u64]) -> ChaCha8Rng {
    rng_from(derive_seed(parent, tags))
}
