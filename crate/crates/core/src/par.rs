//! Data-parallel helpers. With the `parallel` feature these fan out over the
//! current rayon pool; without it they run as plain sequential iterators.
//! Output order is always the input order, so results never depend on the
//! number of worker threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// True when the crate was built with rayon support.
pub const ENABLED: bool = cfg!(feature = "parallel");

#[cfg(feature = "parallel")]
pub(crate) fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub(crate) fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Maps contiguous chunks of `0..n`, handing each chunk its own scratch
/// state from `init`. Results are concatenated in index order.
#[cfg(feature = "parallel")]
pub(crate) fn map_chunked<S, T, I, F>(n: usize, chunk: usize, init: I, f: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let parts: Vec<Vec<T>> = starts
        .par_iter()
        .map(|&start| {
            let mut scratch = init();
            (start..(start + chunk).min(n)).map(|i| f(&mut scratch, i)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_chunked<S, T, I, F>(n: usize, _chunk: usize, init: I, f: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> T + Sync + Send,
{
    let mut scratch = init();
    (0..n).map(|i| f(&mut scratch, i)).collect()
}

/// Current worker count (1 without the `parallel` feature).
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
