//! Seed derivation.
//!
//! Every random quantity in the crate is drawn from a [`ChaCha8Rng`] whose
//! 64-bit seed is obtained by walking a path of integer tags from a root
//! seed. Deriving child `t` from seed `s` is
//! `splitmix64(s ^ splitmix64(t + GOLDEN))`, so a replication `r` that touches
//! pseudo column `k` draws from `root.derive(r).derive(k)` regardless of which
//! thread runs it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut v: u64) -> u64 {
    v = v.wrapping_add(GOLDEN);
    v = (v ^ (v >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    v = (v ^ (v >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    v ^ (v >> 31)
}

/// Named substreams used across the crate. Keeping them in one place avoids
/// accidental reuse of a tag for two unrelated purposes.
pub mod tags {
    pub const PSEUDO: u64 = 1;
    pub const STATISTIC: u64 = 2;
    pub const FOLDS: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const CPT: u64 = 5;
    pub const DATA: u64 = 6;
    pub const COEFFICIENTS: u64 = 7;
    pub const NOISE: u64 = 8;
    pub const UNLABELED: u64 = 9;
    pub const TREE: u64 = 10;
    pub const DISTILL: u64 = 11;
    pub const REPLICATION: u64 = 12;
    pub const ASSIGNMENT: u64 = 13;
}

/// A reproducible position in the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream(seed)
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    pub fn derive(self, tag: u64) -> Self {
        SeedStream(splitmix64(self.0 ^ splitmix64(tag.wrapping_add(GOLDEN))))
    }

    pub fn derive2(self, a: u64, b: u64) -> Self {
        self.derive(a).derive(b)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for SeedStream {
    fn from(seed: u64) -> Self {
        SeedStream(seed)
    }
}
