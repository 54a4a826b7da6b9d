//! Data-parallel helpers.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it (or
//! when parallelism is switched off at runtime) they run the same closures
//! serially. Work is always partitioned by output index and every reduction
//! runs in a fixed order inside one closure call, so results are
//! bit-identical regardless of thread count.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static ENABLED: AtomicBool = AtomicBool::new(true);

/// Turns runtime parallel dispatch on or off. Has no effect when the crate
/// was built without the `parallel` feature.
pub fn set_enabled(on: bool) {
    ENABLED.store(on, Ordering::SeqCst);
}

pub fn is_enabled() -> bool {
    cfg!(feature = "parallel") && ENABLED.load(Ordering::SeqCst)
}

/// Caps the global worker pool. Must be called before the first parallel
/// call to take effect; later calls are ignored.
pub fn init_threads(threads: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

/// Worker count parallel helpers would use right now.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    if is_enabled() {
        return rayon::current_num_threads();
    }
    1
}

/// Reads `SMAMBA_THREADS` and sizes the pool accordingly.
pub fn init_from_env() {
    let threads = std::env::var("SMAMBA_THREADS").ok().and_then(|v| v.parse::<usize>().ok());
    init_threads(threads);
}

/// `(0..n).map(f).collect()`, in parallel when enabled. Output order is the
/// index order.
pub fn map<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_enabled() && n > 1 {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Calls `f(chunk_index, chunk)` for each `chunk_len`-sized piece of `data`.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    if is_enabled() && data.len() > chunk_len {
        data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v = map(100, |i| i * i);
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn chunks_cover_everything_once() {
        let mut data = vec![0usize; 37];
        for_each_chunk(&mut data, 5, |ci, c| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = ci * 5 + j;
            }
        });
        assert_eq!(data, (0..37).collect::<Vec<_>>());
    }
}
