//! Execution strategy for data-parallel workloads (sweep rows, Monte Carlo
//! paths, batch solves). With the `parallel` feature (default) the work runs
//! on a rayon pool sized by the `PLATOON_H2_THREADS` environment variable;
//! without it everything runs sequentially. Output order is the input order
//! in both modes, so results are identical either way.

/// Environment variable that caps worker threads for parallel maps.
pub const THREADS_ENV: &str = "PLATOON_H2_THREADS";

/// Map `f` over `items` sequentially. The baseline the benches compare
/// against.
pub fn map_sequential<T, U>(items: Vec<T>, f: impl Fn(T) -> U) -> Vec<U> {
    items.into_iter().map(f).collect()
}

#[cfg(feature = "parallel")]
mod imp {
    use once_cell::sync::Lazy;
    use rayon::prelude::*;

    static POOL: Lazy<rayon::ThreadPool> = Lazy::new(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = configured_threads() {
            builder = builder.num_threads(n);
        }
        builder.build().expect("failed to build worker pool")
    });

    fn configured_threads() -> Option<usize> {
        std::env::var(super::THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
    }

    /// Map `f` over `items`, preserving order.
    pub fn map<T: Send, U: Send>(items: Vec<T>, f: impl Fn(T) -> U + Sync + Send) -> Vec<U> {
        POOL.install(|| items.into_par_iter().map(f).collect())
    }

    /// Number of worker threads parallel maps will use.
    pub fn effective_parallelism() -> usize {
        POOL.current_num_threads()
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    /// Sequential fallback: the crate was built without the `parallel`
    /// feature.
    pub fn map<T: Send, U: Send>(items: Vec<T>, f: impl Fn(T) -> U + Sync + Send) -> Vec<U> {
        super::map_sequential(items, f)
    }

    pub fn effective_parallelism() -> usize {
        1
    }
}

pub use imp::{effective_parallelism, map};
