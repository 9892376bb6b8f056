//! Data-parallel helpers. With the `parallel` feature the closures run on the
//! rayon pool once the workload is large enough; otherwise they run in order
//! on the calling thread. Each output chunk is written by exactly one closure
//! call, so results are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Result;

/// Below this many multiply-adds the sequential path wins.
#[cfg(feature = "parallel")]
const PAR_WORK: usize = 1 << 15;

/// Calls `f(chunk_index, chunk)` for every `chunk`-sized piece of `out`.
/// `work` is a rough flop count for the whole call.
pub(crate) fn for_each_chunk<F>(out: &mut [f64], chunk: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if chunk == 0 || out.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    if work >= PAR_WORK && out.len() > chunk && rayon::current_num_threads() > 1 {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = work;
    out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Maps a slice of items through `f`, preserving order.
pub(crate) fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if items.len() > 1 && rayon::current_num_threads() > 1 {
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// True when the crate was built with the rayon backend.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

/// Runs independent jobs on up to `jobs` threads, keeping input order. The
/// first error wins.
#[cfg(feature = "parallel")]
pub(crate) fn run_jobs<I, T, F>(jobs: usize, items: Vec<I>, f: F) -> Result<Vec<T>>
where
    I: Send,
    T: Send,
    F: Fn(I) -> Result<T> + Sync + Send,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| crate::error::Error::config(format!("thread pool: {e}")))?;
    pool.install(|| items.into_par_iter().map(f).collect())
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn run_jobs<I, T, F>(_jobs: usize, items: Vec<I>, f: F) -> Result<Vec<T>>
where
    F: Fn(I) -> Result<T>,
{
    items.into_iter().map(f).collect()
}
