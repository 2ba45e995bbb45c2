//! Path-parallel evaluation with a fixed chunking, so that reductions are
//! performed in the same order whatever the number of worker threads.

use std::ops::Range;

use rayon::prelude::*;

pub const CHUNK: usize = 256;

/// Applies `f` to consecutive path ranges of length [`CHUNK`] and returns
/// the results in path order.
pub fn map_chunks<T, F>(paths: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
{
    let chunks = paths.div_ceil(CHUNK);
    (0..chunks).into_par_iter().map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(paths))).collect()
}
