//! Data-parallel helpers with a sequential fallback.
//!
//! Reductions are split into fixed-size chunks whose partial sums are
//! combined in chunk order, so the result is bit-identical whether or not
//! the `parallel` feature is enabled and independent of the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of terms summed sequentially before a partial is emitted.
pub const CHUNK: usize = 4096;

/// `Σ_{i < len} f(i)` with the fixed chunked summation order.
pub fn sum_by<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = len.div_ceil(CHUNK);
    let partial = |c: usize| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(len);
        let mut s = 0.0;
        for i in lo..hi {
            s += f(i);
        }
        s
    };
    #[cfg(feature = "parallel")]
    let partials: Vec<f64> = (0..chunks).into_par_iter().map(partial).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<f64> = (0..chunks).map(partial).collect();
    partials.into_iter().sum()
}

/// Fills `out[i] = f(i)`.
pub fn fill<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    out.par_iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
    #[cfg(not(feature = "parallel"))]
    out.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
}

/// Order-preserving map over independent work items.
pub fn map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Runs `f` on each mutable chunk of length `len`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(len).enumerate().for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Whether this build evaluates kernels on the rayon pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Caps the global pool size; no-op in sequential builds or when the pool
/// was already initialised.
pub fn init_threads(threads: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(t) = threads.filter(|&t| t > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}
