//! Named, independently seeded random streams.
//!
//! Every random decision is drawn from a ChaCha stream keyed by
//! `(seed, stream, a, b)`, so the trajectory of a run depends only on its seed
//! and never on how many numbers another stream consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Corruption = 3,
    Branch = 4,
    Split = 5,
    TieBreak = 6,
    Synthetic = 7,
}

pub fn stream(seed: u64, which: Stream, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(which as u64).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
