use std::sync::Arc;

use parid_core::ReplicationRunner;
use rayon::prelude::*;

/// Runs replications on a dedicated rayon pool.
///
/// Results are collected in index order, and every replication draws from
/// its own seeded stream, so output does not depend on the thread count.
#[derive(Debug, Clone)]
pub struct Parallel {
    pool: Arc<rayon::ThreadPool>,
}

impl Parallel {
    /// `threads = 0` uses rayon's default (one per logical CPU).
    pub fn new(threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool construction");
        Parallel { pool: Arc::new(pool) }
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl ReplicationRunner for Parallel {
    fn run<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(&f).collect())
    }
}
