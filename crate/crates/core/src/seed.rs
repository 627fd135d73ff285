//! Counter-style seed derivation.
//!
//! Every random draw in a search is keyed by where it happens (lane, step,
//! branch, token position) rather than by how many draws came before it, so
//! results do not depend on scheduling order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one key.
pub fn derive(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, p| mix(acc ^ mix(*p)))
}

/// FNV-1a over bytes, finalized with [`mix`]. Stable across platforms and
/// toolchains, unlike `std`'s default hasher.
pub fn hash_bytes(bytes: &[u8]) -> u64 {
    let h = bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01B3)
    });
    mix(h)
}

/// Seed of search lane `lane` under master seed `master`.
///
/// Lane 0 keeps the master seed itself, so a single-lane run seeded with
/// `lane_seed(m, j)` replays lane `j` of a multi-lane run seeded with `m`.
pub fn lane_seed(master: u64, lane: usize) -> u64 {
    if lane == 0 {
        master
    } else {
        derive(&[master, lane as u64])
    }
}

/// Deterministic generator for one keyed draw site.
pub fn token_rng(key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key)
}

/// Key prefix for one (lane, step, branch) generation stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(pub u64);

impl StreamKey {
    pub fn new(lane_seed: u64, step: usize, branch: usize) -> Self {
        Self(derive(&[lane_seed, step as u64, branch as u64]))
    }

    /// Generator for the token drawn at `position` within the step.
    pub fn at(self, position: usize) -> ChaCha8Rng {
        token_rng(derive(&[self.0, position as u64]))
    }
}

/// Key of the shared draw that picks distinct branch tokens at a branch point.
pub fn branch_point_key(lane_seed: u64, step: usize, position: usize) -> u64 {
    derive(&[lane_seed, step as u64, u64::MAX, position as u64])
}
