//! Data-parallel helpers with a sequential fallback.
//!
//! All hot loops in this crate (per-mode eigensolves, audit sampling,
//! lattice propagation) are expressed as an ordered map over an index
//! range. With the `parallel` feature the map runs on the rayon pool;
//! without it the exact same closure runs sequentially. Results are
//! collected in index order either way, so output is identical and
//! bit-stable regardless of schedule.

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Configure the global thread pool size. A no-op in sequential builds;
/// returns an error if the pool was already initialized with a different
/// size (rayon allows one global initialization).
#[cfg(feature = "parallel")]
pub fn set_threads(threads: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

/// Configure the global thread pool size (sequential build: no-op).
#[cfg(not(feature = "parallel"))]
pub fn set_threads(_threads: usize) -> Result<(), String> {
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_preserves_index_order() {
        let out = par_map(100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
