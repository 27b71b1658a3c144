//! Seeded, portable random streams.
//!
//! Every random quantity in the crate comes from a ChaCha8 generator keyed by
//! a 64-bit seed plus a stream id. Independent consumers (class means, each
//! class's samples, samplers, initializers) use distinct stream ids so adding
//! a class or changing one consumer never shifts the draws of another.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids used by the crate. Class-indexed streams add the class index.
pub mod streams {
    pub const CLASS_MEANS: u64 = 0;
    pub const CLASS_SAMPLES: u64 = 1;
    pub const TWIN_SAMPLES: u64 = 1 << 32;
    pub const ENCODER_INIT: u64 = 2 << 32;
    pub const HEAD_INIT: u64 = 3 << 32;
    pub const SAMPLER: u64 = 4 << 32;
    pub const DERIVE: u64 = 5 << 32;
}

/// Tags for seeds derived from an experiment's master seed.
pub mod tags {
    pub const TEST_SET: u64 = 1;
    pub const BOUND_SET: u64 = 2;
    pub const MODEL_INIT: u64 = 3;
    pub const STAGE1: u64 = 4;
    pub const STAGE2: u64 = 5;
    pub const RETRAIN: u64 = 6;
}

pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child seed for a named role from a parent seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    stream_rng(seed, streams::DERIVE + tag).next_u64()
}
