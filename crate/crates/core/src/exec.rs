//! Ordered data-parallel map over sample indices.
//!
//! With the `parallel` feature the work runs on a rayon pool; without it,
//! or with a single worker, everything runs on the calling thread. Output
//! order always follows the index, so results never depend on scheduling.

/// Worker count: `0` uses every available core.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Workers(pub usize);

impl Workers {
    pub const SEQUENTIAL: Workers = Workers(1);

    pub fn is_sequential(self) -> bool {
        self.0 == 1 || !cfg!(feature = "parallel")
    }
}

/// `(0..n).map(f)` collected in index order.
pub fn map_indexed<T, F>(n: usize, workers: Workers, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers.is_sequential() || n <= 1 {
        return (0..n).map(f).collect();
    }
    parallel::map(n, workers, f)
}

#[cfg(feature = "parallel")]
mod parallel {
    use rayon::prelude::*;

    use super::Workers;

    pub(super) fn map<T, F>(n: usize, workers: Workers, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        let run = || (0..n).into_par_iter().map(&f).collect();
        if workers.0 == 0 {
            return run();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(workers.0).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                log::warn!("thread pool unavailable ({e}); using the global pool");
                run()
            }
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod parallel {
    use super::Workers;

    pub(super) fn map<T, F>(n: usize, _workers: Workers, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
