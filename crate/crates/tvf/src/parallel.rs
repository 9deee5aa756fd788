//! Order-preserving fan-out over scoped threads.

use std::num::NonZeroUsize;
use std::thread;

use crate::error::{CliError, CliResult};

pub const THREADS_ENV: &str = "TVF_THREADS";

/// Worker count: `TVF_THREADS` when set, otherwise the available cores.
pub fn threads_from_env() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<NonZeroUsize>()
            .map(NonZeroUsize::get)
            .map_err(|_| CliError::usage(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        Err(_) => Ok(thread::available_parallelism().map(NonZeroUsize::get).unwrap_or(1)),
    }
}

/// Apply `f` to every item using up to `threads` workers on contiguous
/// chunks. Results keep input order, so output is independent of the worker
/// count.
pub fn map_ordered<I, O, F>(items: &[I], threads: usize, f: F) -> CliResult<Vec<O>>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> CliResult<O> + Sync,
{
    let workers = threads.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    let parts: Vec<CliResult<Vec<O>>> = thread::scope(|s| {
        let handles: Vec<_> =
            items.chunks(chunk).map(|c| s.spawn(move || c.iter().map(f).collect::<CliResult<Vec<O>>>())).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
