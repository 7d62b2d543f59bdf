//! Data-parallel helpers with a sequential fallback.
//!
//! The `parallel` feature (on by default) backs these with rayon. Every call
//! site maps a pure function over independent items and collects in input
//! order, so results are identical bit for bit with and without the feature
//! and for any thread count. Training itself never goes through here; only
//! embarrassingly parallel work (batch inference, sweep cells, gradient-check
//! trials) does.

/// Maps `f` over `items`, in parallel when the `parallel` feature is enabled.
/// Output order always matches input order.
#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

/// Sequential twin of [`map_collect`], always available. Benches compare the
/// two directly; tests use it to pin down determinism claims.
pub fn map_collect_seq<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

/// Sizes the global rayon pool. Returns an error string when the pool was
/// already initialized with a different size. No-op without the feature.
#[cfg(feature = "parallel")]
pub fn init_thread_pool(threads: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

#[cfg(not(feature = "parallel"))]
pub fn init_thread_pool(_threads: usize) -> Result<(), String> {
    Ok(())
}
