//! Worker pool used for per-step fan-out and per-problem parallelism.
//!
//! With the `parallel` feature the pool is a rayon thread pool; without it,
//! or with a single worker, every map runs sequentially on the caller's
//! thread. Results always come back in input order.

#[cfg(feature = "parallel")]
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Default)]
pub struct Executor {
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("workers", &self.workers()).finish()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Self::default()
    }

    /// A pool of `workers` threads; `0` means one per logical core. Falls
    /// back to sequential execution for one worker or when built without
    /// the `parallel` feature.
    pub fn with_workers(workers: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            let workers = if workers == 0 {
                std::thread::available_parallelism().map_or(1, |n| n.get())
            } else {
                workers
            };
            if workers > 1 {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .thread_name(|i| format!("egb-worker-{i}"))
                    .build()
                    .expect("failed to build worker pool");
                return Self {
                    pool: Some(Arc::new(pool)),
                };
            }
        }
        let _ = workers;
        Self::sequential()
    }

    pub fn workers(&self) -> usize {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.current_num_threads();
        }
        1
    }

    pub fn is_parallel(&self) -> bool {
        self.workers() > 1
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let items: Vec<u64> = (0..257).collect();
        let seq = Executor::sequential().map(&items, |x| x * x);
        let par = Executor::with_workers(4).map(&items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(Executor::with_workers(1).workers(), 1);
    }
}
