//! Order-preserving fan-out over independent work items.
//!
//! With the `parallel` feature a dedicated rayon pool of `concurrency` threads
//! runs the closure; otherwise, or when `concurrency <= 1`, items are processed
//! in a plain loop. Either way the output is in input order, so callers get
//! identical results regardless of scheduling.

/// Which path [`map_ordered`] will take for a given concurrency limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Sequential,
    Parallel { threads: usize },
}

impl Strategy {
    pub fn for_limit(concurrency: usize) -> Self {
        if cfg!(feature = "parallel") && concurrency > 1 {
            Strategy::Parallel {
                threads: concurrency,
            }
        } else {
            Strategy::Sequential
        }
    }
}

pub fn map_ordered<T, R, F>(items: &[T], concurrency: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match Strategy::for_limit(concurrency) {
        Strategy::Sequential => items.iter().map(f).collect(),
        Strategy::Parallel { threads } => parallel::map(items, threads, f),
    }
}

#[cfg(feature = "parallel")]
mod parallel {
    use rayon::prelude::*;

    pub(super) fn map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        if items.len() <= 1 {
            return items.iter().map(f).collect();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(e) => {
                log::warn!("could not start a {threads}-thread pool ({e}); running sequentially");
                items.iter().map(f).collect()
            }
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod parallel {
    pub(super) fn map<T, R, F>(items: &[T], _threads: usize, f: F) -> Vec<R>
    where
        F: Fn(&T) -> R,
    {
        items.iter().map(f).collect()
    }
}
