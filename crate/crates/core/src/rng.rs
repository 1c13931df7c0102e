//! Keyed random streams.
//!
//! Every random quantity in a run is drawn from a stream identified by the
//! run seed plus a path of tags (phase, point index, chunk index, ...). Work
//! can then be split across threads in any way without changing which numbers
//! each trajectory sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Concrete generator handed to samplers.
pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stream {
    key: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: splitmix64(seed),
        }
    }

    /// Independent sub-stream for `tag`.
    pub fn child(&self, tag: u64) -> Self {
        Self {
            key: splitmix64(self.key ^ splitmix64(tag.wrapping_add(0x632b_e59b_d9b4_e019))),
        }
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.key)
    }

    pub fn key(&self) -> u64 {
        self.key
    }
}

/// Tags for the top-level phases of a run.
pub mod tags {
    pub const TEST_POINTS: u64 = 1;
    pub const ESTIMATE: u64 = 2;
    pub const TRAIN_POINTS: u64 = 3;
    pub const TARGETS: u64 = 4;
    pub const BOUNDARY: u64 = 5;
    pub const INIT: u64 = 6;
    pub const REFRESH: u64 = 7;
    pub const BATCH: u64 = 8;
    pub const POOL: u64 = 9;
}
