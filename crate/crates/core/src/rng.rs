//! Hierarchical, path-addressed random streams.
//!
//! Every random draw in the crate comes from a [`RngStream`] identified by a
//! master seed and a path of integers (subject, stage, replica, ...). The
//! generator for a path is seeded from a SHA-256 digest of the seed and the
//! path, so streams never depend on which worker or in what order a job runs.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Stage tags used as path components by the pipeline.
pub mod stage {
    pub const AGGRESSIVE_FLM: u64 = 1;
    pub const WARP: u64 = 2;
    pub const GMM: u64 = 3;
    pub const PRIOR_FLM: u64 = 4;
    pub const EMPTY_PRIOR: u64 = 5;
    pub const STANDALONE_FLM: u64 = 6;
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub path: Vec<u64>,
}

impl RngStream {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            path: Vec::new(),
        }
    }

    /// Stream for `path` appended with `index`.
    pub fn child(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        Self {
            master_seed: self.master_seed,
            path,
        }
    }

    pub fn descend(&self, indices: &[u64]) -> Self {
        let mut path = self.path.clone();
        path.extend_from_slice(indices);
        Self {
            master_seed: self.master_seed,
            path,
        }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha12Rng {
        let mut hasher = Sha256::new();
        hasher.update(b"lesionsynth.rng.v1");
        hasher.update(self.master_seed.to_le_bytes());
        hasher.update((self.path.len() as u64).to_le_bytes());
        for p in &self.path {
            hasher.update(p.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha12Rng::from_seed(seed)
    }
}
