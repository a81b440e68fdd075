//! Switch between the rayon and sequential code paths.
//!
//! Every parallel loop in the crate maps an index range to an ordered `Vec`,
//! so results never depend on scheduling.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when the `parallel` feature is disabled.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// `(0..n).map(f).collect()`, possibly in parallel. Output order is index order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Map over a slice, preserving order.
    pub fn map_slice<'a, S, T, F>(self, items: &'a [S], f: F) -> Vec<T>
    where
        S: Sync,
        T: Send,
        F: Fn(&'a S) -> T + Sync + Send,
    {
        self.map_range(items.len(), |i| f(&items[i]))
    }
}

/// Run `f` on a dedicated pool of `jobs` threads. Without the `parallel`
/// feature, or with `jobs == 0`, `f` runs on the current thread/global pool.
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if jobs > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => return pool.install(f),
            Err(e) => log::warn!("could not build a {jobs}-thread pool ({e}); using the global pool"),
        }
    }
    let _ = jobs;
    f()
}
