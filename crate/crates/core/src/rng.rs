//! Seed splitting.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by a root
//! seed plus a path of tags, so that a draw's value depends only on *what* it
//! is for (clip, sample index, diffusion step) and never on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a sequence of integer tags.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &tag| splitmix64(acc ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

/// FNV-1a over the bytes of a name; used to turn stream names into tags.
pub fn name_tag(name: &str) -> u64 {
    name.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Child seed for a named stream such as `"clip:bach_01"` or `"replication:7"`.
pub fn named_seed(seed: u64, name: &str) -> u64 {
    derive_seed(seed, &[name_tag(name)])
}

pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}
