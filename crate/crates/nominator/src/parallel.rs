//! Page-level parallelism on a rayon thread pool.

use nominator_core::exec::Executor;
use rayon::prelude::*;

/// Runs [`Executor::map`] on a dedicated pool. Results keep index order, so
/// outputs do not depend on the worker count.
#[derive(Debug)]
pub struct Rayon {
    pool: rayon::ThreadPool,
}

impl Rayon {
    /// A pool of `workers` threads; `None` or `Some(0)` uses all cores.
    pub fn new(workers: Option<usize>) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.unwrap_or(0))
            .build()?;
        Ok(Rayon { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Rayon {
    fn map<T: Send, F: Fn(usize) -> T + Sync + Send>(&self, n: usize, f: F) -> Vec<T> {
        self.pool
            .install(|| (0..n).into_par_iter().map(f).collect())
    }
}
