//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature, [`Parallelism::Parallel`] runs on the rayon
//! global pool; without it every call is sequential. Results keep input
//! order either way, so output never depends on scheduling.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parallelism {
    Sequential,
    #[default]
    Parallel,
}

impl Parallelism {
    /// True if work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

pub fn map<T, R, F>(items: &[T], mode: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

pub fn map_range<R, F>(n: usize, mode: Parallelism, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Runs `f` on a dedicated pool of `workers` threads when parallel; 0 keeps
/// the global pool.
pub fn install<R, F>(workers: usize, mode: Parallelism, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && workers > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => return pool.install(f),
            Err(e) => log::warn!("falling back to the global pool: {e}"),
        }
    }
    let _ = (workers, mode);
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let items: Vec<u64> = (0..1000).collect();
        let a = map(&items, Parallelism::Sequential, |x| x * x);
        let b = map(&items, Parallelism::Parallel, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(
            map_range(5, Parallelism::Parallel, |i| i),
            vec![0, 1, 2, 3, 4]
        );
    }
}
