//! Execution helpers for the data-parallel inner loops.
//!
//! Every hot loop in the engine is an index-parallel map with disjoint
//! outputs; reductions happen sequentially on the collected results so that
//! floating-point sums are order-independent of the thread count. With the
//! `parallel` feature (default) the maps run on rayon; without it they fall
//! back to plain iterators and produce bitwise-identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Per-path RNG: one ChaCha stream per path index, all derived from `seed`.
/// Draws are independent across paths and identical whether the map runs
/// sequentially or on a thread pool.
pub(crate) fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64 + 1);
    rng
}

pub(crate) fn map_paths<T, F>(n_paths: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync + Send,
{
    map_indexed(n_paths, move |p| {
        let mut rng = path_rng(seed, p);
        f(p, &mut rng)
    })
}

/// Mean and standard error of a sample, accumulated in index order.
pub(crate) fn mean_std_err(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
