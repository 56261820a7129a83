use super::Dataset;
use crate::rng;

/// Two 1D Gaussian classes: label 0 around `+mean`, label 1 around `-mean`.
pub fn gen_gaussian_1d(mean: f64, std: f64, n_per_class: usize, seed: u64) -> Dataset {
    assert!(std > 0.0 && n_per_class > 0, "std and n_per_class must be positive");
    let mut ds = Dataset::new(1);
    for (label, center) in [(0usize, mean), (1, -mean)] {
        let mut r = rng::stream(seed, "gaussian-1d", label as u64);
        let z = rng::normal_vec(&mut r, n_per_class);
        for v in z {
            ds.push(&[center + std * v], label);
        }
    }
    ds
}
