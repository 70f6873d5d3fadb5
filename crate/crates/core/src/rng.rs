//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by the
//! user seed, with a 64-bit stream id that names what the numbers are for:
//!
//! ```text
//! stream = (purpose << 56) | (round << 40) | index
//! ```
//!
//! `purpose` is one of the constants below, `round` is the optimizer's outer
//! iteration (0 for the simulator) and `index` identifies the camera, pair or
//! triplet. Streams never overlap, so adding draws to one purpose leaves all
//! other datasets and samples unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EXTRINSIC_PERTURBATION: u64 = 1;
pub const DEPTH_NOISE: u64 = 2;
pub const DEPTH_DROPOUT: u64 = 3;
pub const GEO_SAMPLES: u64 = 4;
pub const CYCLE_SAMPLES: u64 = 5;

pub fn stream(seed: u64, purpose: u64, round: u64, index: u64) -> ChaCha8Rng {
    debug_assert!(purpose < 256 && round < (1 << 16) && index < (1 << 40));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 56) | ((round & 0xffff) << 40) | (index & ((1 << 40) - 1)));
    rng
}
