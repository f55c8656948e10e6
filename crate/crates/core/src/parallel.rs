//! Sized rayon pools shared by the graph builder and the optimizer.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::{ThreadPool, ThreadPoolBuilder};

/// Resolves a requested worker count; 0 means one per available core.
pub fn resolve_threads(threads: usize) -> usize {
    if threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        threads
    }
}

fn pool(threads: usize) -> Arc<ThreadPool> {
    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<ThreadPool>>>> = OnceLock::new();
    let mut pools = POOLS.get_or_init(Default::default).lock().unwrap();
    pools
        .entry(threads)
        .or_insert_with(|| {
            Arc::new(
                ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .thread_name(move |i| format!("vec2gc-{threads}-{i}"))
                    .build()
                    .expect("failed to start worker pool"),
            )
        })
        .clone()
}

/// Runs `f` inside a pool of exactly `threads` workers (0 = all cores).
pub fn install<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    let threads = resolve_threads(threads);
    if rayon::current_thread_index().is_some() && rayon::current_num_threads() == threads {
        return f();
    }
    pool(threads).install(f)
}
