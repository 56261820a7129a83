use crate::{Error, Result};

pub const DEFAULT_MAX_PERIOD: f64 = 10_000.0;

/// Sinusoidal embedding `[sin(t f_0), .., sin(t f_{h-1}), cos(t f_0), .., cos(t f_{h-1})]`
/// with `h = dim / 2` and `f_i = max_period^(-i / h)`.
pub fn time_embedding(t: f64, dim: usize, max_period: f64) -> Result<Vec<f64>> {
    if !dim.is_multiple_of(2) {
        return Err(Error::config(format!("time embedding dim {dim} must be even")));
    }
    let mut out = vec![0.0; dim];
    write_time_embedding(t, max_period, &mut out);
    Ok(out)
}

/// Allocation-free variant; `out.len()` must be even.
pub(crate) fn write_time_embedding(t: f64, max_period: f64, out: &mut [f64]) {
    let half = out.len() / 2;
    let (sin, cos) = out.split_at_mut(half);
    for i in 0..half {
        let freq = (-max_period.ln() * i as f64 / half as f64).exp();
        let (s, c) = (t * freq).sin_cos();
        sin[i] = s;
        cos[i] = c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time() {
        assert_eq!(time_embedding(0.0, 4, DEFAULT_MAX_PERIOD).unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
        let e = time_embedding(0.0, 16, 100.0).unwrap();
        assert!(e[..8].iter().all(|&v| v == 0.0));
        assert!(e[8..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn matches_direct_formula() {
        let e = time_embedding(10.0, 8, 10_000.0).unwrap();
        for i in 0..4 {
            let freq = 10_000f64.powf(-(i as f64) / 4.0);
            assert!((e[i] - (10.0 * freq).sin()).abs() < 1e-12);
            assert!((e[i + 4] - (10.0 * freq).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_dim_is_error() {
        assert!(time_embedding(1.0, 5, DEFAULT_MAX_PERIOD).is_err());
    }

    #[test]
    fn bounded() {
        for t in [0.0, 0.37, 12.5, 999.0] {
            let e = time_embedding(t, 32, DEFAULT_MAX_PERIOD).unwrap();
            assert!(e.iter().all(|v| v.abs() <= 1.0));
        }
    }
}
