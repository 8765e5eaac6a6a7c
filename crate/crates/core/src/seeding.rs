//! Seed derivation for independent, reproducible RNG streams.
//!
//! One root seed per trial; sub-streams (instance generation, database draws,
//! oracle noise, selector pairings) are derived by pushing `root + stream id`
//! through a splitmix64 finalizer so streams do not overlap.

use rand::SeedableRng;

use crate::Prng;

/// splitmix64 finalizer step.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of the trial rooted at `root`.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    splitmix64(root ^ stream.wrapping_mul(0xa076_1d64_78bd_642f))
}

/// RNG for sub-stream `stream` of the trial rooted at `root`.
pub fn stream_rng(root: u64, stream: u64) -> Prng {
    Prng::seed_from_u64(derive_seed(root, stream))
}

/// Root seed for trial `index` of an experiment with base seed `base`.
pub fn trial_root(base: u64, index: u64) -> u64 {
    splitmix64(base.wrapping_add(index))
}
