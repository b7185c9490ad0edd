use rayon::prelude::*;
use rayon::ThreadPoolBuilder;

/// Maps `f` over `items` on at most `concurrency` threads, keeping input order.
pub(crate) fn bounded_map<T, R, F>(concurrency: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = concurrency.max(1);
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    match ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running sequentially");
            items.iter().map(f).collect()
        }
    }
}
