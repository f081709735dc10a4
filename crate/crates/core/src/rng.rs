//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by the run
//! seed plus a tuple of integers (subject, eye, epoch, ...). Streams are
//! independent of the order in which they are created, so parallel work stays
//! reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of a key tuple.
pub fn mix(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Derive the stream for `keys` under `seed`.
pub fn stream(seed: u64, keys: &[u64]) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(mix(keys));
    rng
}

/// Stream labels, so call sites do not collide by accident.
pub mod tag {
    pub const SUBJECT: u64 = 1;
    pub const EYE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const SCRAMBLE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const BATCH_ORDER: u64 = 6;
    pub const AUGMENT: u64 = 7;
    pub const VALIDATION: u64 = 8;
    pub const SELECTIVE: u64 = 9;
}
