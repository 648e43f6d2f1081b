//! Counter-based randomness.
//!
//! Every random draw in a simulation is addressed by coordinates
//! `(seed, purpose, round, client, step)`. The coordinates are mixed into a
//! 64-bit key which seeds a fresh ChaCha8 generator, so a draw never depends
//! on how many draws happened before it or on which thread performed it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Separates independent uses of the same `(round, client, step)` address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    LocalStep = 1,
    ControlPass = 2,
    WarmStart = 3,
    Sampling = 4,
    Output = 5,
    Dataset = 6,
    Partition = 7,
    Ensemble = 8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub purpose: Purpose,
    pub round: u64,
    pub client: u64,
    pub step: u64,
}

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        RngStream {
            seed,
            purpose,
            round: 0,
            client: 0,
            step: 0,
        }
    }

    pub fn at(seed: u64, purpose: Purpose, round: u64, client: u64, step: u64) -> Self {
        RngStream {
            seed,
            purpose,
            round,
            client,
            step,
        }
    }

    pub fn with_purpose(self, purpose: Purpose) -> Self {
        RngStream { purpose, ..self }
    }

    pub fn with_round(self, round: u64) -> Self {
        RngStream { round, ..self }
    }

    pub fn with_client(self, client: u64) -> Self {
        RngStream { client, ..self }
    }

    pub fn with_step(self, step: u64) -> Self {
        RngStream { step, ..self }
    }

    pub fn key(&self) -> u64 {
        let mut h = mix64(self.seed);
        for word in [self.purpose as u64, self.round, self.client, self.step] {
            h = mix64(h ^ word);
        }
        h
    }

    /// A generator positioned at the start of this coordinate's stream.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key())
    }
}
