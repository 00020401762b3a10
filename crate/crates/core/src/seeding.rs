//! Deterministic derivation of independent generator streams from a run seed.
//!
//! Every rollout, batch draw and initialization gets its own generator keyed
//! by `(seed, tag, indices...)`, so results never depend on thread scheduling
//! or on how many draws an earlier consumer made.

use rand::SeedableRng;

use crate::SimRng;

pub const TAG_DATASET: u64 = 0x01;
pub const TAG_POLICY_INIT: u64 = 0x02;
pub const TAG_VALUE_INIT: u64 = 0x03;
pub const TAG_BATCH: u64 = 0x04;
pub const TAG_ROLLOUT: u64 = 0x05;
pub const TAG_EVAL: u64 = 0x06;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a tag and any number of indices into one 64-bit seed.
pub fn mix(seed: u64, tag: u64, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(tag));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    h
}

pub fn stream(seed: u64, tag: u64, indices: &[u64]) -> SimRng {
    SimRng::seed_from_u64(mix(seed, tag, indices))
}
