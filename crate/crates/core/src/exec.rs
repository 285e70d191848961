//! Data-parallel loops with a sequential fallback.
//!
//! With the `parallel` feature the loops run on the rayon pool that is current
//! for the calling thread; without it they run in place. Reductions always sum
//! fixed-size chunks and then add the chunk partials in index order, so a
//! result is bitwise identical for every thread count and for both builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Length of one reduction chunk. Part of the determinism contract: changing
/// it changes rounding.
pub const REDUCE_CHUNK: usize = 1024;

/// Evaluates `f(i)` for every index and collects the results in order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
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

/// Overwrites `out[i]` with `f(i)`.
pub fn fill_indexed<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, o) in out.iter_mut().enumerate() {
            *o = f(i);
        }
    }
}

/// Runs `f(chunk_index, chunk)` over consecutive chunks of `len` items.
pub fn for_each_chunk_mut<T, F>(out: &mut [T], len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(len).enumerate().for_each(|(c, s)| f(c, s));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (c, s) in out.chunks_mut(len).enumerate() {
            f(c, s);
        }
    }
}

/// Sums `f(i)` over `0..n` in the fixed chunked order.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partial = |c: usize| {
        let end = ((c + 1) * REDUCE_CHUNK).min(n);
        let mut s = 0.0;
        for i in c * REDUCE_CHUNK..end {
            s += f(i);
        }
        s
    };
    map_indexed(chunks, partial).into_iter().fold(0.0, |acc, s| acc + s)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum_indexed(a.len(), |i| a[i] * b[i])
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Number of worker threads the current pool would use (1 without `parallel`).
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
