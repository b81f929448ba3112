//! Process-wide thread pool, capped by `PASER_THREADS`.

use std::sync::OnceLock;

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

/// Parallelism cap: `PASER_THREADS` when set (minimum 1), otherwise the
/// number of available cores.
pub fn max_threads() -> usize {
    match std::env::var("PASER_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) => n.max(1),
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    }
}

pub(crate) fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(max_threads())
            .build()
            .expect("thread pool construction")
    })
}
