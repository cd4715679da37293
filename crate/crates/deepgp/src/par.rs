//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel loop in this crate is indexed — one task computes exactly one
//! output slot — so results are bit-identical whatever the thread schedule, and
//! identical to the sequential fallback built with `--no-default-features`.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Always-sequential variant, kept callable so benches can compare both paths
/// within one compiled configuration.
pub fn map_indexed_seq<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Fills `out[i] = f(i)` in parallel over disjoint slots.
#[cfg(feature = "parallel")]
pub fn fill_indexed<T: Send>(out: &mut [T], f: impl Fn(usize) -> T + Sync + Send) {
    out.par_iter_mut().enumerate().for_each(|(i, slot)| *slot = f(i));
}

#[cfg(not(feature = "parallel"))]
pub fn fill_indexed<T>(out: &mut [T], f: impl Fn(usize) -> T) {
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = f(i);
    }
}

pub fn fill_indexed_seq<T>(out: &mut [T], f: impl Fn(usize) -> T) {
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = f(i);
    }
}
