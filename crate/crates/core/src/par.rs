//! Internal data-parallel helpers.
//!
//! Operators parallelize over disjoint output chunks (batch/channel planes or
//! row groups). Every chunk is computed by a fixed-order sequential loop, so
//! results are bit-identical no matter how many threads run or whether the
//! `parallel` feature is enabled at all.
//!
//! The runtime switch exists so one binary can run (and benchmark) both
//! paths; `set_parallelism(Parallelism::Sequential)` forces the sequential
//! fallback even when the feature is compiled in.

use std::sync::atomic::{AtomicBool, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Parallel,
    Sequential,
}

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

pub fn set_parallelism(mode: Parallelism) {
    FORCE_SEQUENTIAL.store(mode == Parallelism::Sequential, Ordering::Relaxed);
}

/// Caps internal parallelism: 1 forces the sequential path, larger values
/// bound the worker pool (first call wins; later calls only toggle the
/// sequential switch).
pub fn configure_threads(n: usize) {
    if n <= 1 {
        set_parallelism(Parallelism::Sequential);
        return;
    }
    set_parallelism(Parallelism::Parallel);
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// The mode actually in effect (compile-time feature and runtime switch).
pub fn parallelism() -> Parallelism {
    #[cfg(feature = "parallel")]
    {
        if FORCE_SEQUENTIAL.load(Ordering::Relaxed) {
            Parallelism::Sequential
        } else {
            Parallelism::Parallel
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        Parallelism::Sequential
    }
}

/// Splits `out` into `chunk`-sized pieces and runs `f(chunk_index, piece)`
/// on each, in parallel when enabled. `out.len()` must be a multiple of
/// `chunk`.
/// Below this element count the spawn overhead outweighs the work.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_ELEMENTS: usize = 4096;

pub(crate) fn for_each_chunk_mut<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert!(chunk > 0 && out.len() % chunk == 0);
    #[cfg(feature = "parallel")]
    {
        if parallelism() == Parallelism::Parallel && out.len() >= MIN_PARALLEL_ELEMENTS {
            use rayon::prelude::*;
            // batch small chunks so each task carries real work
            let min_chunks = MIN_PARALLEL_ELEMENTS.div_ceil(chunk).max(1);
            out.par_chunks_mut(chunk)
                .enumerate()
                .with_min_len(min_chunks)
                .for_each(|(i, piece)| f(i, piece));
            return;
        }
    }
    for (i, piece) in out.chunks_mut(chunk).enumerate() {
        f(i, piece);
    }
}
