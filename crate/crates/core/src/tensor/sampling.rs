use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_rng, domain};

/// Deterministic with-replacement mini-batch indices.
///
/// Synchronous iteration `t` draws one index stream; worker `k` takes the
/// `k`-th chunk of `B` indices. A serial run with batch `N·B` therefore sees
/// exactly the union of the `N` workers' batches at every step. Asynchronous
/// workers draw from a per-(worker, local step) stream instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSchedule {
    pub seed: u64,
}

impl SamplingSchedule {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// First `count` indices of iteration `t`'s stream.
    pub fn iteration(&self, t: u64, count: usize, n: usize) -> Vec<usize> {
        let mut rng = derive_rng(self.seed, &[domain::SYNC_BATCH, t]);
        (0..count).map(|_| rng.random_range(0..n)).collect()
    }

    /// Chunk `worker` (of width `batch`) of iteration `t`'s stream.
    pub fn sync_chunk(&self, t: u64, worker: usize, batch: usize, n: usize) -> Vec<usize> {
        let mut all = self.iteration(t, (worker + 1) * batch, n);
        all.drain(..worker * batch);
        all
    }

    pub fn async_batch(&self, worker: usize, step: u64, batch: usize, n: usize) -> Vec<usize> {
        let mut rng = derive_rng(self.seed, &[domain::ASYNC_BATCH, worker as u64, step]);
        (0..batch).map(|_| rng.random_range(0..n)).collect()
    }
}
