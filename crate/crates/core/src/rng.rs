//! Seed derivation shared by every sampler.
//!
//! All randomness flows from a 64-bit master seed. Independent streams are
//! obtained by mixing `(master, domain, index)` through splitmix64, so the
//! stream used by replica `i` never depends on how replicas are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream domains. Distinct domains keep graph and walk streams apart even
/// when they share a master seed and replica index.
pub const DOMAIN_GRAPH: u64 = 0x6772_6170_6800_0001;
pub const DOMAIN_WALK: u64 = 0x7761_6c6b_0000_0002;
pub const DOMAIN_START: u64 = 0x7374_6172_7400_0003;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic seed for stream `index` of `domain` under `master`.
pub fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(domain)) ^ index)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Runs `f` for every replica index in `0..n` and returns the results in
/// index order, in parallel when the `parallel` feature is on.
pub fn replicate<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n as u64).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n as u64).map(f).collect()
    }
}
