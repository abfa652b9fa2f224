//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these helpers dispatch to rayon;
//! without it they run on the calling thread. Results are always returned in
//! input order, so outputs are identical between the two builds.

/// Maps `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Maps `f` over `items`, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    map(&idx, |&i| f(i))
}

/// Applies `f` to each element of `items` mutably together with its index.
#[cfg(feature = "parallel")]
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Applies `f` to each element of `items` mutably together with its index.
#[cfg(not(feature = "parallel"))]
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Configures the global worker count. Returns `false` if the pool was
/// already initialised (or the build is sequential).
#[cfg(feature = "parallel")]
pub fn set_workers(n: usize) -> bool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .is_ok()
}

/// Configures the global worker count. Returns `false` if the pool was
/// already initialised (or the build is sequential).
#[cfg(not(feature = "parallel"))]
pub fn set_workers(_n: usize) -> bool {
    false
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
