//! Seed derivation. Every random stream in the simulator is a ChaCha8 generator
//! seeded from the master seed, a purpose tag and up to two indices, mixed with
//! SplitMix64. Components can therefore be re-run in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Task = 1,
    Partition = 2,
    ClientSampling = 3,
    BatchSampling = 4,
    Sample = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(master ^ (stream as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

pub fn stream_rng(master: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, a, b))
}
