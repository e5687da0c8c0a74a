//! Reproducible random streams.
//!
//! Every stochastic routine takes an explicit `&mut impl Rng`. Experiments
//! derive one ChaCha stream per (seed, purpose, indices) so that results do
//! not depend on how trials are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags, used as the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Topology = 1,
    Samples = 2,
    Solver = 3,
    Queries = 4,
    Oracle = 5,
    Simulation = 6,
    Fixture = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a path of indices into a 64-bit key.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// An independent generator for `(master, path)` under `purpose`.
pub fn stream(master: u64, purpose: Purpose, path: &[u64]) -> StreamRng {
    let key = derive_seed(master, path);
    let mut seed = [0u8; 32];
    for (i, chunk) in seed.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(key.wrapping_add(i as u64)).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Encode a real parameter (e.g. a coupling strength) as a path element.
pub fn key_f64(x: f64) -> u64 {
    x.to_bits()
}
