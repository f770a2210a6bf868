//! Thin seam between the rayon data-parallel kernels and the sequential
//! fallback (`--no-default-features`). Everything above this module is
//! written against these two helpers only.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fill `out` by chunks of `chunk` elements; `fill(i, chunk_slice)` writes
/// the i-th chunk. Atoms are independent, so no synchronization is needed.
pub(crate) fn fill_chunks<F>(out: &mut [f64], chunk: usize, fill: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(chunk > 0 && out.len() % chunk == 0);
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| fill(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| fill(i, c));
    }
}

/// Map an index range to a vector, row-parallel when enabled.
pub(crate) fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
