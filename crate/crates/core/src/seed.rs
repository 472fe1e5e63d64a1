//! Seed derivation.
//!
//! All randomness is drawn from [`ChaCha8Rng`], a counter-based stream
//! cipher generator. Child seeds are derived from a parent by folding a
//! path of `u64` labels through SplitMix64, so any node of the schedule can
//! be regenerated on its own:
//!
//! ```text
//! run seed
//!  └─ image(index, variant)            derive(seed, [IMAGE, index, variant])
//!      ├─ weather                       derive(image, [WEATHER])
//!      │   ├─ transmission              derive(weather, [TRANSMISSION])
//!      │   ├─ streak layer i            derive(weather, [STREAKS, i])
//!      │   └─ particles                 derive(weather, [PARTICLES])
//!      ├─ exposure draw                 derive(image, [EXPOSURE])
//!      └─ adjustment map n              derive(image, [DARKEN, n])
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const IMAGE: u64 = 0x494d_4147;
pub const WEATHER: u64 = 0x5745_4154;
pub const TRANSMISSION: u64 = 0x5452_414e;
pub const STREAKS: u64 = 0x5354_524b;
pub const PARTICLES: u64 = 0x5041_5254;
pub const EXPOSURE: u64 = 0x4558_504f;
pub const DARKEN: u64 = 0x4441_524b;
pub const LATENT: u64 = 0x4c41_5445;
pub const INIT: u64 = 0x494e_4954;
pub const BATCH: u64 = 0x4241_5443;
pub const TOYSET: u64 = 0x544f_5953;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a label path.
pub fn derive(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(parent), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(parent: u64, path: &[u64]) -> ChaCha8Rng {
    rng(derive(parent, path))
}
