//! Seeded random streams.
//!
//! Every random draw in a run comes from a ChaCha stream derived from the run
//! seed and a stream tag, so runs are reproducible across platforms and
//! independent components never share generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream tags for the components of a run.
pub mod tag {
    pub const GRAPH: u64 = 1;
    pub const MODEL: u64 = 2;
    pub const OBSERVATIONS: u64 = 3;
    pub const REGENERATE: u64 = 4;
    pub const CHURN: u64 = 5;
    pub const MOMENTS: u64 = 6;
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let a = mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let b = mix(a ^ tag.wrapping_mul(0xd6e8_feb8_6659_fd93));
    mix(b ^ index.wrapping_mul(0xa076_1d64_78bd_642f))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_stream(seed: u64, tag: u64, index: u64) -> Stream {
    stream(derive_seed(seed, tag, index))
}
