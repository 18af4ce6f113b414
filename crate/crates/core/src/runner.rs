//! Execution of independent replications.

use alloc::vec::Vec;

/// Maps a replication index to a result. Implementations may run the
/// closure in any order or in parallel but must return results ordered by
/// index.
pub trait ReplicationRunner {
    fn run<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send;
}

/// Runs replications one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl ReplicationRunner for Sequential {
    fn run<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
