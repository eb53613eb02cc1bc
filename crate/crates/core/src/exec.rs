//! Page-level parallelism hook.
//!
//! The core crate runs sequentially; callers with threads implement
//! [`Executor`] to fan work out over pages. Results always come back in index
//! order so reductions stay deterministic.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// Evaluates `f(0), .., f(n - 1)` and returns the results in index order.
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
