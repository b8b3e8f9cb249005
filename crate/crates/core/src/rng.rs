//! Counter-based random streams.
//!
//! Every random draw in a run comes from a generator keyed by
//! `(experiment seed, phase, purpose, counter)`, so any single step can be replayed
//! without replaying the steps before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Which part of a workflow a stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Parameter initialisation.
    Init,
    /// Non-private warmup that produces the starting point.
    Warmup,
    /// Trajectory-recording training.
    Stage1,
    /// Main training loop (subspace training and the full-space baselines).
    Train,
    /// Synthetic data generation.
    Data,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Warmup => "warmup",
            Phase::Stage1 => "stage1",
            Phase::Train => "train",
            Phase::Data => "data",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Sampling,
    Noise,
    Params,
    Frame,
    Examples,
}

impl Purpose {
    fn as_str(self) -> &'static str {
        match self {
            Purpose::Sampling => "sampling",
            Purpose::Noise => "noise",
            Purpose::Params => "params",
            Purpose::Frame => "frame",
            Purpose::Examples => "examples",
        }
    }
}

/// Identifies one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub seed: u64,
    pub phase: Phase,
    pub purpose: Purpose,
    pub counter: u64,
}

impl StreamId {
    pub fn new(seed: u64, phase: Phase, purpose: Purpose, counter: u64) -> Self {
        Self { seed, phase, purpose, counter }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(b"dpsft-stream-v1");
        h.update(self.seed.to_le_bytes());
        h.update(self.phase.as_str().as_bytes());
        h.update([0u8]);
        h.update(self.purpose.as_str().as_bytes());
        h.update([0u8]);
        h.update(self.counter.to_le_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(key)
    }
}
