//! Data-parallel helpers.
//!
//! With the `parallel` feature (on by default) work is spread over a rayon
//! pool; without it, or with `Threads::Fixed(1)`, every helper runs a plain
//! sequential loop. Results are always returned in input order, so output
//! never depends on the degree of parallelism.

use std::num::NonZeroUsize;

/// Degree of parallelism for a batch of independent work items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Threads {
    /// Use the global rayon pool.
    #[default]
    Auto,
    /// Use a dedicated pool of exactly this many threads.
    Fixed(NonZeroUsize),
}

impl Threads {
    pub const SEQUENTIAL: Threads = Threads::Fixed(NonZeroUsize::MIN);

    /// `0` means [`Threads::Auto`].
    pub fn from_count(n: usize) -> Self {
        NonZeroUsize::new(n).map_or(Threads::Auto, Threads::Fixed)
    }

    pub fn is_sequential(self) -> bool {
        !cfg!(feature = "parallel") || self == Threads::SEQUENTIAL
    }
}

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map<T, U, F>(items: &[T], threads: Threads, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    if threads.is_sequential() || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    parallel::map(items, threads, f)
}

/// Like [`map`] for fallible work; the first error in input order wins.
pub fn try_map<T, U, E, F>(items: &[T], threads: Threads, f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(&T) -> Result<U, E> + Sync + Send,
{
    map(items, threads, f).into_iter().collect()
}

#[cfg(feature = "parallel")]
mod parallel {
    use rayon::prelude::*;

    use super::Threads;

    pub(super) fn map<T, U, F>(items: &[T], threads: Threads, f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match threads {
            Threads::Auto => items.par_iter().map(f).collect(),
            Threads::Fixed(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.get()).build() {
                Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
                Err(err) => {
                    log::warn!("could not build a {n}-thread pool ({err}); running sequentially");
                    items.iter().map(f).collect()
                }
            },
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod parallel {
    use super::Threads;

    pub(super) fn map<T, U, F>(items: &[T], _threads: Threads, f: F) -> Vec<U>
    where
        F: Fn(&T) -> U,
    {
        items.iter().map(f).collect()
    }
}
