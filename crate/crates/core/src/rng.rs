//! Named, reproducible random streams.
//!
//! Every stochastic element of a simulation draws from a stream keyed by
//! `(master seed, stream name, index...)`, so adding a new consumer never
//! perturbs the draws seen by an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const WORLD: &str = "world";
pub const TREATMENT: &str = "treatment";
pub const NOISE: &str = "noise";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed for `name` and the index path `indices`.
pub fn stream_seed(master: u64, name: &str, indices: &[u64]) -> u64 {
    // FNV-1a over the stream name, then fold in each index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut s = splitmix64(master ^ splitmix64(h));
    for &i in indices {
        s = splitmix64(s ^ splitmix64(i.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    s
}

pub fn stream(master: u64, name: &str, indices: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(master, name, indices))
}
