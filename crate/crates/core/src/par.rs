//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (on by default) the work is spread over the
//! rayon thread pool; without it, or when `parallel` is false, items are
//! processed in order on the calling thread. Results are always returned in
//! input order, so callers see identical output either way.

pub fn map<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel && items.len() > 1 {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Whether this build can run work in parallel at all.
pub const fn available() -> bool {
    cfg!(feature = "parallel")
}
