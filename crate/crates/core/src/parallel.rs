//! Data-parallel helpers with a sequential fallback.
//!
//! Dataset generation, rendering, and evaluation are independent per item;
//! results are collected in input order so thread count never changes the
//! output. With the `parallel` feature disabled every helper runs the plain
//! sequential loop.

/// Worker-pool size for the data-parallel helpers.
///
/// `Default` reads the `CANONLIFT_THREADS` environment variable (falling back
/// to all cores); `Fixed(1)` is the sequential reference behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Default,
    Fixed(usize),
}

impl Parallelism {
    pub fn from_env() -> Self {
        match std::env::var("CANONLIFT_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
        {
            Some(n) if n >= 1 => Parallelism::Fixed(n),
            _ => Parallelism::Default,
        }
    }

    fn threads(self) -> Option<usize> {
        match self {
            Parallelism::Default => None,
            Parallelism::Fixed(n) => Some(n.max(1)),
        }
    }

    fn is_sequential(self) -> bool {
        matches!(self, Parallelism::Fixed(1))
    }
}

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(par: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if par.is_sequential() {
        return (0..n).map(f).collect();
    }
    use rayon::prelude::*;
    match par.threads() {
        None => (0..n).into_par_iter().map(f).collect(),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .expect("thread pool");
            pool.install(|| (0..n).into_par_iter().map(f).collect())
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(_par: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential reference path, kept callable regardless of features so the
/// bench suite can compare both on one build.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
