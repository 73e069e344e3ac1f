//! Deterministic parallelism helper.
//!
//! Work is split over disjoint output chunks; each chunk is filled by
//! exactly one task running a sequential loop, so results are bit-identical
//! regardless of thread count. Small outputs stay sequential to avoid
//! scheduler overhead, and the `parallel` feature (off for wasm builds)
//! removes rayon entirely.

const PAR_THRESHOLD: usize = 1 << 14;

#[cfg(feature = "parallel")]
pub(crate) fn maybe_par_chunks_mut<T: Send>(
    data: &mut [T],
    chunk: usize,
    f: impl Fn(usize, &mut [T]) + Send + Sync,
) {
    use rayon::prelude::*;
    if data.len() < PAR_THRESHOLD {
        for (i, c) in data.chunks_mut(chunk).enumerate() {
            f(i, c);
        }
    } else {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn maybe_par_chunks_mut<T: Send>(
    data: &mut [T],
    chunk: usize,
    f: impl Fn(usize, &mut [T]) + Send + Sync,
) {
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}
