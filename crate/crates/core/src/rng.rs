//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by mixing one of the five named experiment seeds with a stream tag
//! and the indices that identify the draw site (client, round, leg, ...).
//! Derivation is pure, so any consumer — including test oracles replaying a
//! schedule — can reconstruct the exact stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

// Stream tags keep draw sites with the same seed and indices apart.
pub const STREAM_DATA_GEN: u64 = 1;
pub const STREAM_PARTITION: u64 = 2;
pub const STREAM_INIT: u64 = 3;
pub const STREAM_CLIENT_SAMPLING: u64 = 4;
pub const STREAM_BATCH_ORDER: u64 = 5;
pub const STREAM_JITTER: u64 = 6;
pub const STREAM_HOLDOUT: u64 = 7;

/// splitmix64 round; the standard finalizer-quality mixer.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Folds a list of words into a single well-mixed seed.
pub fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x51_7c_c1_b7_27_22_0a_95u64;
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

/// ChaCha8 stream keyed by the mixed parts. ChaCha is used throughout
/// because its output is stable across platforms and crate versions.
pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}
