//! Counter-based seed streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by
//! `(seed, domain, index)`, so per-sample work produces the same numbers
//! whether it runs sequentially or across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Named sub-streams so unrelated consumers of one seed never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    Generator = 1,
    Sample = 2,
    Mask = 3,
    Init = 4,
    Batch = 5,
    Diffusion = 6,
    Planner = 7,
    Noise = 8,
    Eval = 9,
    Test = 10,
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> Rng {
    let key = splitmix64(splitmix64(seed ^ splitmix64(domain as u64)) ^ index);
    Rng::seed_from_u64(key)
}

pub fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
