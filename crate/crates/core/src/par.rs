//! Thin switch between rayon and plain iterators.
//!
//! With the `parallel` feature (default) index-parallel maps and argmax
//! reductions run on the rayon pool; without it they run sequentially.
//! Both paths produce identical results: every per-index computation is
//! sequential internally and reductions use a total order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Collects `f(i)` for `i in 0..n`, preserving index order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
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

/// Applies `f` to every element of a mutable slice together with its index.
pub fn for_each_indexed<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
}

/// Index of the largest score among `0..n`, ties broken toward the lowest
/// index. `score` returns `None` for indices that are not eligible.
pub fn argmax_by_score<F>(n: usize, score: F) -> Option<(usize, f64)>
where
    F: Fn(usize) -> Option<f64> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n)
            .into_par_iter()
            .filter_map(|i| score(i).map(|s| (i, s)))
            .reduce_with(better)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).filter_map(|i| score(i).map(|s| (i, s))).reduce(better)
    }
}

fn better(a: (usize, f64), b: (usize, f64)) -> (usize, f64) {
    if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
        b
    } else {
        a
    }
}

/// True when the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
