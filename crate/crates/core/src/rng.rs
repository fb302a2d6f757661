//! Counter-style keyed random streams.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(seed, kind, id)`, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Entity kinds that own an independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamKind {
    ScenePoints = 1,
    Cameras = 2,
    View = 3,
    TrackSample = 4,
    Weights = 5,
    Training = 6,
    Ransac = 7,
    KMeans = 8,
    Suite = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed, a stream kind and an entity id into one 64-bit key.
pub fn stream_key(seed: u64, kind: StreamKind, id: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ kind as u64) ^ id)
}

pub fn stream(seed: u64, kind: StreamKind, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, kind, id))
}
