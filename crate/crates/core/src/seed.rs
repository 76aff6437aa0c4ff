//! Deterministic seed derivation.
//!
//! Every random draw in a run comes from a `ChaCha8Rng` whose seed is derived
//! from the experiment seed plus a purpose tag and a few integer coordinates
//! (client id, round, ...). Streams never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Split = 2,
    Partition = 3,
    Init = 4,
    Zones = 5,
    Calibrator = 6,
    Malicious = 7,
    Training = 8,
    Attack = 9,
    Sampling = 10,
    Surrogate = 11,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a base seed with a stream tag and coordinates into a new seed.
pub fn derive(seed: u64, stream: Stream, coords: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream as u64));
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(seed: u64, stream: Stream, coords: &[u64]) -> ChaCha8Rng {
    rng_from(derive(seed, stream, coords))
}
