//! Bounded worker pool with ordered results.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Applies `f` to every item on up to `workers` threads and returns the
/// results in input order. `workers == 1` runs on the calling thread.
pub fn ordered_map<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    match workers {
        0 => Err(Error::config("workers must be at least 1")),
        1 => Ok(items.iter().map(f).collect()),
        n => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config(format!("worker pool: {e}")))?;
            Ok(pool.install(|| items.par_iter().map(&f).collect()))
        }
    }
}
