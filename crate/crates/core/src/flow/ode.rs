//! Fixed-step explicit ODE solvers over `t in [0, 1]`.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OdeMethod {
    Euler,
    #[default]
    Rk4,
}

impl fmt::Display for OdeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OdeMethod::Euler => "euler",
            OdeMethod::Rk4 => "rk4",
        })
    }
}

impl FromStr for OdeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(OdeMethod::Euler),
            "rk4" => Ok(OdeMethod::Rk4),
            other => Err(Error::config(format!("unknown ODE method '{other}'"))),
        }
    }
}

/// Integrate `dz/dt = f(z, t)` from `t = 0` to `t = 1` in `n_steps` equal steps.
///
/// `f(z, t, out)` writes the velocity. Step `i` starts at `t = i / n_steps`.
pub fn integrate<F>(z0: &[f64], n_steps: usize, method: OdeMethod, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64, &mut [f64]),
{
    if n_steps == 0 {
        return Err(Error::config("ODE integration needs at least one step"));
    }
    let d = z0.len();
    let h = 1.0 / n_steps as f64;
    let mut z = z0.to_vec();
    let mut k1 = vec![0.0; d];
    let (mut k2, mut k3, mut k4, mut tmp) = match method {
        OdeMethod::Euler => (Vec::new(), Vec::new(), Vec::new(), Vec::new()),
        OdeMethod::Rk4 => (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]),
    };
    for step in 0..n_steps {
        let t = step as f64 / n_steps as f64;
        f(&z, t, &mut k1);
        match method {
            OdeMethod::Euler => {
                for (zi, k) in z.iter_mut().zip(&k1) {
                    *zi += h * k;
                }
            }
            OdeMethod::Rk4 => {
                let half = t + 0.5 * h;
                axpy(&z, 0.5 * h, &k1, &mut tmp);
                f(&tmp, half, &mut k2);
                axpy(&z, 0.5 * h, &k2, &mut tmp);
                f(&tmp, half, &mut k3);
                axpy(&z, h, &k3, &mut tmp);
                f(&tmp, (step + 1) as f64 / n_steps as f64, &mut k4);
                for i in 0..d {
                    z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { step });
        }
    }
    Ok(z)
}

fn axpy(z: &[f64], a: f64, k: &[f64], out: &mut [f64]) {
    for ((o, zi), ki) in out.iter_mut().zip(z).zip(k) {
        *o = zi + a * ki;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_is_identity() {
        for m in [OdeMethod::Euler, OdeMethod::Rk4] {
            let z = integrate(&[0.3, -1.2], 7, m, |_, _, o| o.fill(0.0)).unwrap();
            assert_eq!(z, vec![0.3, -1.2]);
        }
    }

    #[test]
    fn constant_field_moves_by_one() {
        for m in [OdeMethod::Euler, OdeMethod::Rk4] {
            for n in [1, 2, 4, 64] {
                let z = integrate(&[0.25], n, m, |_, _, o| o.fill(1.0)).unwrap();
                assert_eq!(z, vec![1.25]);
            }
            for n in [3, 10, 50] {
                let z = integrate(&[0.25], n, m, |_, _, o| o.fill(1.0)).unwrap();
                assert!((z[0] - 1.25).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn linear_field_matches_exponential() {
        let z = integrate(&[0.7], 50, OdeMethod::Rk4, |z, _, o| o.copy_from_slice(z)).unwrap();
        let exact = 0.7 * std::f64::consts::E;
        assert!(((z[0] - exact) / exact).abs() < 1e-6);
    }

    #[test]
    fn time_argument_is_used() {
        // dz/dt = 3 t^2 integrates to 1; RK4 is exact on cubics.
        let z = integrate(&[0.0], 5, OdeMethod::Rk4, |_, t, o| o[0] = 3.0 * t * t).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn blow_up_reports_step() {
        let r = integrate(&[1.0], 10, OdeMethod::Euler, |z, _, o| o[0] = z[0] * 1e300);
        assert!(matches!(r, Err(Error::Integration { step: 1 })), "{r:?}");
        assert!(integrate(&[1.0], 0, OdeMethod::Euler, |_, _, _| {}).is_err());
    }

    #[test]
    fn method_names() {
        assert_eq!("rk4".parse::<OdeMethod>().unwrap(), OdeMethod::Rk4);
        assert_eq!(OdeMethod::Euler.to_string(), "euler");
        assert!("midpoint".parse::<OdeMethod>().is_err());
    }
}
