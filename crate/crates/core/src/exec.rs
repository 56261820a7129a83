//! Data-parallel helpers with a sequential fallback.
//!
//! Work is always split into the same fixed-size chunks and partial results
//! are combined in chunk order, so the floating-point result does not depend
//! on the thread count or on whether the `parallel` feature is enabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Samples per work unit in batch reductions.
pub const CHUNK: usize = 32;

/// `(0..n).map(f).collect()`, in parallel when available.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
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

/// Map over mutable slice items in parallel when available.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
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

/// Sum of per-item losses and per-item gradient contributions.
///
/// `f(scratch, i, grad)` must add item `i`'s gradient into `grad` and return
/// its loss. Each chunk of [`CHUNK`] items gets its own scratch (from `init`)
/// and its own gradient buffer; buffers are then added in chunk order.
pub fn reduce_grad<S, I, F>(n: usize, grad_len: usize, init: I, f: F) -> (f64, Vec<f64>)
where
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [f64]) -> f64 + Sync + Send,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partials = map_range(n_chunks, |c| {
        let mut scratch = init();
        let mut g = vec![0.0; grad_len];
        let mut loss = 0.0;
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            loss += f(&mut scratch, i, &mut g);
        }
        (loss, g)
    });
    let mut total = vec![0.0; grad_len];
    let mut loss = 0.0;
    for (l, g) in partials {
        loss += l;
        for (t, v) in total.iter_mut().zip(&g) {
            *t += v;
        }
    }
    (loss, total)
}

/// Pairwise (cascade) summation; fixed association order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    (m, mean(&dev).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduce_grad_matches_serial_sum() {
        let (loss, g) = reduce_grad(100, 3, || (), |_, i, g| {
            g[i % 3] += i as f64;
            1.0
        });
        assert_eq!(loss, 100.0);
        let mut want = [0.0; 3];
        for i in 0..100 {
            want[i % 3] += i as f64;
        }
        assert_eq!(g, want);
    }

    #[test]
    fn pairwise_sum_small_and_large() {
        assert_eq!(pairwise_sum(&[]), 0.0);
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
        let (m, s) = mean_std(&[2.0, 4.0]);
        assert_eq!((m, s), (3.0, 1.0));
    }
}
