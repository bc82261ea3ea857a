//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper preserves input order in its output. Reductions are done in
//! fixed-size chunks whose partial results are combined left to right, so the
//! floating point result does not depend on the number of worker threads, or
//! on whether the `parallel` feature is enabled at all.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by [`chunked_fold`]. Part of the numeric contract: changing
/// it changes the summation order of every reduction.
pub const REDUCE_CHUNK: usize = 64;

/// Order-preserving map over a slice.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Folds each [`REDUCE_CHUNK`]-sized chunk of `items` independently with
/// `fold`, then merges the chunk results in order with `merge`.
pub fn chunked_fold<T, A, I, F, M>(items: &[T], init: I, fold: F, merge: M) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize, &T) + Sync + Send,
    M: Fn(&mut A, A),
{
    let chunks: Vec<&[T]> = items.chunks(REDUCE_CHUNK).collect();
    let partials = map_range(chunks.len(), |c| {
        let mut acc = init();
        let offset = c * REDUCE_CHUNK;
        for (j, item) in chunks[c].iter().enumerate() {
            fold(&mut acc, offset + j, item);
        }
        acc
    });
    let mut total = init();
    for p in partials {
        merge(&mut total, p);
    }
    total
}
