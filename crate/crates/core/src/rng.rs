//! Counter-based random streams.
//!
//! Every random draw in a run comes from a ChaCha8 stream keyed by the run
//! seed and a named purpose, with the block (or segment, or trial) index as
//! the stream number. Blocks can therefore be simulated in any order, on any
//! thread, and still reproduce bit for bit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Alice's phase pattern and both overall phases.
    Source = 1,
    /// Photon arrivals and dark counts of the coherent engine.
    Detection = 2,
    /// Pair choice during sifting.
    Sift = 3,
    /// Per-trial seeds in scans.
    Trial = 4,
    /// Photon-number engine.
    PhotonNumber = 5,
}

pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(stream as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// A child seed, e.g. for the `index`-th repetition of a scan.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    stream_rng(seed, stream, index).next_u64()
}
