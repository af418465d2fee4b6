//! Deterministic per-structure random streams.
//!
//! Every randomized structure (tree, Voronoi partition, projection row, ...)
//! draws from its own stream, derived from the master seed, a domain tag and
//! the structure index:
//!
//! ```text
//! stream_seed = splitmix64(splitmix64(seed ^ domain) ^ splitmix64(index))
//! ```
//!
//! The stream itself is ChaCha8 seeded with `stream_seed`. Because nothing is
//! shared between streams, results do not depend on how structures are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RngStream = ChaCha8Rng;

/// Domain tags keep streams for different purposes apart even when they use
/// the same index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Partition = 0x1,
    Projection = 0x2,
    KMeans = 0x3,
    Hnsw = 0x4,
    Experiment = 0x5,
}

/// The splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ domain as u64) ^ splitmix64(index))
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> RngStream {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, domain, index))
}

/// Stream used to build partition `index` of a model.
pub fn partition_stream(seed: u64, index: usize) -> RngStream {
    stream(seed, Domain::Partition, index as u64)
}
