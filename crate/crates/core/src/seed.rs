//! Seed derivation.
//!
//! Every random quantity in a run descends from one root seed. A stage gets
//! its own seed via [`derive_seed`]`(root, stream)`, and sample `i` of a
//! stage draws from ChaCha8 seeded with the stage seed on stream `i`. Sample
//! values therefore depend only on `(root, stream, i)`, never on batch
//! partitioning or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Well-known stream labels used by the pipelines.
pub mod streams {
    pub const TRAIN: u64 = 1;
    pub const CALIBRATION: u64 = 2;
    pub const AUXILIARY: u64 = 3;
    pub const PIXEL_SELECTION: u64 = 4;
    pub const AUDIT: u64 = 5;
    pub const VALIDATION: u64 = 6;
    pub const NETWORK: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `hash(seed, stream)`: two rounds of SplitMix64 over the pair.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(root) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Generator for sample `index` of the stage seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
