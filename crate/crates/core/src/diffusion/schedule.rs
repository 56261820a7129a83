use crate::{Error, Result};

/// `beta`, `alpha = 1 - beta` and `alpha_bar = prod alpha`, indexed by step
/// `t` in `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// `alpha_bar_T` must fall below this for `q(x_T | x_0)` to be close to `N(0, I)`.
pub const MAX_TERMINAL_ALPHA_BAR: f64 = 1e-3;

impl NoiseSchedule {
    /// Linearly spaced betas from `beta_start` (t = 1) to `beta_end` (t = T).
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("schedule needs at least one step"));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    /// Linear schedule whose endpoints `1e-4 .. 0.02` are rescaled by
    /// `1000 / T`, so shorter chains still end near pure noise.
    pub fn scaled_linear(steps: usize) -> Result<Self> {
        let scale = 1000.0 / steps as f64;
        Self::linear(steps, 1e-4 * scale, 0.02 * scale)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::config("schedule needs at least one step"));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::config(format!("beta {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let last = *alpha_bar.last().expect("non-empty");
        if last >= MAX_TERMINAL_ALPHA_BAR {
            return Err(Error::config(format!(
                "alpha_bar_T = {last:.3e} is not below {MAX_TERMINAL_ALPHA_BAR:e}; lengthen the chain or raise beta"
            )));
        }
        Ok(Self {
            steps: beta.len(),
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn idx(&self, t: usize) -> usize {
        assert!((1..=self.steps).contains(&t), "step {t} outside 1..={}", self.steps);
        t - 1
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if (1..=self.steps).contains(&t) {
            Ok(())
        } else {
            Err(Error::config(format!("step {t} outside 1..={}", self.steps)))
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[self.idx(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[self.idx(t)]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[self.idx(t)]
    }

    /// Network time input for step `t`: `t / T`.
    pub fn normalized(&self, t: usize) -> f64 {
        t as f64 / self.steps as f64
    }

    pub fn first_beta(&self) -> f64 {
        self.beta[0]
    }

    pub fn last_beta(&self) -> f64 {
        self.beta[self.steps - 1]
    }
}

/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise`
pub fn forward_marginal(schedule: &NoiseSchedule, x0: &[f64], t: usize, noise: &[f64]) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    if x0.len() != noise.len() {
        return Err(Error::config("x0 and noise dimensions differ"));
    }
    Ok(marginal_coeffs(schedule.alpha_bar(t), x0, noise))
}

pub(crate) fn marginal_coeffs(alpha_bar: f64, x0: &[f64], noise: &[f64]) -> Vec<f64> {
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.iter().zip(noise).map(|(x, e)| a * x + s * e).collect()
}

/// One forward kernel step `q(x_t | x_{t-1})`.
pub fn forward_step(schedule: &NoiseSchedule, x_prev: &[f64], t: usize, noise: &[f64]) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    let (a, s) = (schedule.alpha(t).sqrt(), schedule.beta(t).sqrt());
    Ok(x_prev.iter().zip(noise).map(|(x, e)| a * x + s * e).collect())
}

/// Posterior mean of `x_{t-1}` given `x_t` (`t = t_next`) and the predicted
/// noise: `(x_t - beta_t / sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_t)`.
pub fn posterior_mean(schedule: &NoiseSchedule, x_next: &[f64], t_next: usize, eps: &[f64]) -> Result<Vec<f64>> {
    schedule.check_step(t_next)?;
    let mut out = vec![0.0; x_next.len()];
    posterior_mean_into(schedule, x_next, t_next, eps, &mut out);
    Ok(out)
}

pub(crate) fn posterior_mean_into(schedule: &NoiseSchedule, x_next: &[f64], t_next: usize, eps: &[f64], out: &mut [f64]) {
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t_next).sqrt();
    let coef = schedule.beta(t_next) / (1.0 - schedule.alpha_bar(t_next)).sqrt();
    for ((o, x), e) in out.iter_mut().zip(x_next).zip(eps) {
        *o = inv_sqrt_alpha * (x - coef * e);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn schedule_sanity() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(1000) - 0.02).abs() < 1e-15);
        for t in 2..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert_eq!(s.alpha(t), 1.0 - s.beta(t));
        }
        // direct product in log space
        let direct: f64 = (1..=1000).map(|t| s.alpha(t).ln()).sum::<f64>().exp();
        assert!((direct - s.alpha_bar(1000)).abs() < 1e-12);
        assert!(s.alpha_bar(1000) < 1e-3);
    }

    #[test]
    fn short_unscaled_schedule_is_rejected() {
        assert!(NoiseSchedule::linear(100, 1e-4, 0.02).is_err());
        let s = NoiseSchedule::scaled_linear(100).unwrap();
        assert!(s.alpha_bar(100) < 1e-3);
        assert!(NoiseSchedule::from_betas(vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn marginal_examples() {
        assert_eq!(marginal_coeffs(1.0, &[0.7], &[3.0]), vec![0.7]);
        let s = NoiseSchedule::scaled_linear(40).unwrap();
        let ab = s.alpha_bar(4);
        assert_eq!(forward_marginal(&s, &[2.0], 4, &[0.0]).unwrap(), vec![ab.sqrt() * 2.0]);
        let x = marginal_coeffs(0.25, &[1.0], &[2.0])[0];
        assert!((x - (0.5 + 0.75f64.sqrt() * 2.0)).abs() < 1e-15);
        assert!((x - 2.232_050_807_568_877).abs() < 1e-12);
        assert!(forward_marginal(&s, &[1.0], 0, &[0.0]).is_err());
        assert!(forward_marginal(&s, &[1.0], 41, &[0.0]).is_err());
    }

    #[test]
    fn posterior_mean_examples() {
        let s = NoiseSchedule::scaled_linear(40).unwrap();
        let mu = posterior_mean(&s, &[0.8], 3, &[0.0]).unwrap()[0];
        assert_eq!(mu, 0.8 / s.alpha(3).sqrt());
        // hand-evaluated: alpha = 0.99, alpha_bar = 0.5, eps = 0.3, x = 0.8
        let want = (0.8 - 0.01 / 0.5f64.sqrt() * 0.3) / 0.99f64.sqrt();
        assert!((want - 0.799_766_237_880_257_5).abs() < 1e-12);
        let mut out = [0.0];
        let toy = ToySchedule::new(0.99, 0.5);
        posterior_mean_into(&toy.0, &[0.8], 1, &[0.3], &mut out);
        assert!((out[0] - want).abs() < 1e-12);
        assert!(posterior_mean(&s, &[0.8], 0, &[0.0]).is_err());
    }

    /// One-step schedule with chosen alpha and alpha_bar, bypassing validation.
    struct ToySchedule(NoiseSchedule);

    impl ToySchedule {
        fn new(alpha: f64, alpha_bar: f64) -> Self {
            ToySchedule(NoiseSchedule {
                steps: 1,
                beta: vec![1.0 - alpha],
                alpha: vec![alpha],
                alpha_bar: vec![alpha_bar],
            })
        }
    }

    #[test]
    fn no_noise_step_is_identity() {
        let toy = ToySchedule::new(1.0, 0.5);
        let mut out = [0.0];
        posterior_mean_into(&toy.0, &[0.42], 1, &[123.0], &mut out);
        assert_eq!(out[0], 0.42);
    }

    #[test]
    fn chained_kernels_match_closed_form() {
        // 1e5 chains of t forward kernels vs the marginal N(sqrt(ab) x0, 1 - ab)
        let s = NoiseSchedule::scaled_linear(50).unwrap();
        let (x0, t, n) = (1.5, 20, 100_000);
        let mut r = rng::stream(3, "chain", 0);
        let finals: Vec<f64> = (0..n)
            .map(|_| {
                let mut x = vec![x0];
                for k in 1..=t {
                    let e = rng::normal_vec(&mut r, 1);
                    x = forward_step(&s, &x, k, &e).unwrap();
                }
                x[0]
            })
            .collect();
        let (m, sd) = crate::exec::mean_std(&finals);
        let ab = s.alpha_bar(t);
        let (want_m, want_v) = (ab.sqrt() * x0, 1.0 - ab);
        let nf = n as f64;
        assert!((m - want_m).abs() < 3.0 * (want_v / nf).sqrt(), "mean {m} vs {want_m}");
        let var = sd * sd;
        assert!((var - want_v).abs() < 3.0 * want_v * (2.0 / nf).sqrt(), "var {var} vs {want_v}");
    }
}
