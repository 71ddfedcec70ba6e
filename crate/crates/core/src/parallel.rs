//! Data-parallel helpers.
//!
//! Work is always split into the same fixed-size chunks and the per-chunk
//! results come back in order, so reductions are bit-identical whether the
//! chunks run sequentially or on the rayon pool.

use serde::{Deserialize, Serialize};

/// Cases per work unit. Fixed so that results do not depend on thread count.
pub const CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    Sequential,
    #[default]
    Parallel,
}

impl Parallelism {
    /// `Parallel` degrades to sequential when built without the feature.
    pub fn effective(self) -> Self {
        if cfg!(feature = "parallel") {
            self
        } else {
            Parallelism::Sequential
        }
    }
}

/// Applies `f` to consecutive chunks of `items`, returning results in order.
pub fn map_chunks<T, R, F>(items: &[T], chunk: usize, mode: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    match mode.effective() {
        Parallelism::Sequential => items.chunks(chunk).map(f).collect(),
        Parallelism::Parallel => par_map(items, chunk, f),
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_chunks(chunk).map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    items.chunks(chunk).map(f).collect()
}

/// Caps the global worker pool from `DLADAN_THREADS` when set. Returns the
/// cap that was applied, if any. Only the first call in a process has an
/// effect.
pub fn init_threads_from_env() -> Option<usize> {
    let n = std::env::var("DLADAN_THREADS").ok()?.trim().parse::<usize>().ok()?;
    if n == 0 {
        return None;
    }
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Some(n)
}
