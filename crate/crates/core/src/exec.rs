//! Order-preserving map helpers that switch between rayon and plain iterators.
//!
//! Every data-parallel loop in the crate funnels through [`ordered_map`] so the
//! `parallel` feature is the single switch between threaded and sequential
//! execution. Both paths collect results in input order and each work item owns
//! its RNG substream, so outputs are bit-identical across the two modes.
//! [`ordered_map_seq`] is always sequential; benches use it as the baseline.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, collecting results in input order.
///
/// Runs on the rayon global pool when the `parallel` feature is enabled,
/// otherwise sequentially.
pub fn ordered_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Sequential twin of [`ordered_map`], independent of feature flags.
pub fn ordered_map_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Maps `f` over the index range `0..n`, collecting results in index order.
pub fn ordered_map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
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

/// Sequential twin of [`ordered_map_indexed`].
pub fn ordered_map_indexed_seq<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_map_preserves_input_order() {
        let items: Vec<u64> = (0..1000).collect();
        let out = ordered_map(&items, |x| x * 2);
        let out_seq = ordered_map_seq(&items, |x| x * 2);
        assert_eq!(out, out_seq);
        assert_eq!(out[999], 1998);
    }

    #[test]
    fn indexed_variants_agree() {
        let a = ordered_map_indexed(257, |i| i as f64 * 0.5);
        let b = ordered_map_indexed_seq(257, |i| i as f64 * 0.5);
        assert_eq!(a, b);
    }
}
