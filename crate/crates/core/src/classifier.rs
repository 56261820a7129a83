//! Noise-aware classifiers `p(c | x_t, t)` and their input gradients.
//!
//! The linear variant is a single affine layer on `[x_t, t / T]`. The MLP
//! variant is the shared architecture with a time embedding and no class
//! embedding.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::data::Dataset;
use crate::diffusion::schedule::marginal_coeffs;
use crate::diffusion::NoiseSchedule;
use crate::nn::net::Scratch;
use crate::nn::train::{fit, TrainConfig, TrainReport};
use crate::nn::{Architecture, Checkpoint, ClassInput, MlpSpec, Net};
use crate::{exec, rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    Linear,
    Mlp,
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierKind::Linear => "linear",
            ClassifierKind::Mlp => "mlp",
        })
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ClassifierKind::Linear),
            "mlp" => Ok(ClassifierKind::Mlp),
            other => Err(Error::config(format!("unknown classifier kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierNet {
    pub kind: ClassifierKind,
    pub net: Net,
    pub schedule: NoiseSchedule,
    dim: usize,
}

#[derive(Debug, Clone)]
pub struct ClassifierScratch {
    net: Scratch,
    input: Vec<f64>,
    grad_in: Vec<f64>,
    logits: Vec<f64>,
}

/// Numerically stable `log sum exp`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

impl ClassifierNet {
    pub fn linear(dim: usize, num_classes: usize, schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        let net = Net::new(MlpSpec::linear(dim + 1, num_classes), seed)?;
        Ok(Self {
            kind: ClassifierKind::Linear,
            net,
            schedule,
            dim,
        })
    }

    pub fn mlp(dim: usize, num_classes: usize, arch: &Architecture, schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        let net = Net::new(arch.spec(dim, num_classes, None), seed)?;
        Ok(Self {
            kind: ClassifierKind::Mlp,
            net,
            schedule,
            dim,
        })
    }

    pub fn new(
        kind: ClassifierKind,
        dim: usize,
        num_classes: usize,
        arch: &Architecture,
        schedule: NoiseSchedule,
        seed: u64,
    ) -> Result<Self> {
        match kind {
            ClassifierKind::Linear => Self::linear(dim, num_classes, schedule, seed),
            ClassifierKind::Mlp => Self::mlp(dim, num_classes, arch, schedule, seed),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.net.spec.output_dim
    }

    pub fn scratch(&self) -> ClassifierScratch {
        ClassifierScratch {
            net: self.net.scratch(),
            input: vec![0.0; self.net.spec.input_dim],
            grad_in: vec![0.0; self.net.spec.input_dim],
            logits: vec![0.0; self.num_classes()],
        }
    }

    fn fill_input(&self, s: &mut ClassifierScratch, x: &[f64], t: usize) -> f64 {
        let tau = self.schedule.normalized(t);
        s.input[..self.dim].copy_from_slice(x);
        if self.kind == ClassifierKind::Linear {
            s.input[self.dim] = tau;
        }
        tau
    }

    pub fn logits_with<'s>(&self, s: &'s mut ClassifierScratch, x: &[f64], t: usize) -> &'s [f64] {
        let tau = self.fill_input(s, x, t);
        let out = self.net.eval_with(&mut s.net, &s.input, tau, ClassInput::None);
        s.logits.copy_from_slice(out);
        &s.logits
    }

    pub fn logits(&self, x: &[f64], t: usize) -> Vec<f64> {
        self.logits_with(&mut self.scratch(), x, t).to_vec()
    }

    pub fn probs(&self, x: &[f64], t: usize) -> Vec<f64> {
        softmax(&self.logits(x, t))
    }

    /// `log p(c | x_t)` and its gradient with respect to `x_t`, written to `grad`.
    pub fn log_prob_grad_with(&self, s: &mut ClassifierScratch, x: &[f64], t: usize, c: usize, grad: &mut [f64]) -> f64 {
        let tau = self.fill_input(s, x, t);
        let logp = self.net.backprop_with(
            &mut s.net,
            &s.input,
            tau,
            ClassInput::None,
            None,
            Some(&mut s.grad_in),
            |logits, cot| {
                let lse = log_sum_exp(logits);
                for (k, (ck, l)) in cot.iter_mut().zip(logits).enumerate() {
                    let p = (l - lse).exp();
                    *ck = if k == c { 1.0 - p } else { -p };
                }
                logits[c] - lse
            },
        );
        grad.copy_from_slice(&s.grad_in[..self.dim]);
        logp
    }

    pub fn log_prob_grad(&self, x: &[f64], t: usize, c: usize) -> Result<(f64, Vec<f64>)> {
        self.schedule.check_step(t)?;
        if x.len() != self.dim {
            return Err(Error::config("input dimension does not match classifier"));
        }
        if c >= self.num_classes() {
            return Err(Error::config(format!("class {c} out of range")));
        }
        let mut g = vec![0.0; self.dim];
        let lp = self.log_prob_grad_with(&mut self.scratch(), x, t, c, &mut g);
        Ok((lp, g))
    }

    /// Fraction of points whose argmax class matches the label at step `t`.
    pub fn accuracy(&self, data: &Dataset, t: usize, seed: u64) -> f64 {
        let ab = self.schedule.alpha_bar(t);
        let hits = exec::map_range(data.len(), |i| {
            let mut r = rng::stream(seed, "classifier-eval", i as u64);
            let noise = rng::normal_vec(&mut r, self.dim);
            let xt = marginal_coeffs(ab, data.point(i), &noise);
            let logits = self.logits(&xt, t);
            let best = (0..logits.len())
                .max_by(|&a, &b| logits[a].total_cmp(&logits[b]))
                .unwrap_or(0);
            usize::from(best == data.label(i))
        });
        hits.iter().sum::<usize>() as f64 / data.len().max(1) as f64
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new("classifier", self.net.clone())
            .with_meta("classifier_kind", self.kind)
            .with_meta("data_dim", self.dim)
            .with_meta("schedule_steps", self.schedule.steps())
            .with_meta("beta_start", self.schedule.first_beta())
            .with_meta("beta_end", self.schedule.last_beta())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("classifier")?;
        let kind: ClassifierKind = ck.meta_parse("classifier_kind")?;
        let dim: usize = ck.meta_parse("data_dim")?;
        let schedule = NoiseSchedule::linear(
            ck.meta_parse("schedule_steps")?,
            ck.meta_parse("beta_start")?,
            ck.meta_parse("beta_end")?,
        )?;
        let want_in = match kind {
            ClassifierKind::Linear => dim + 1,
            ClassifierKind::Mlp => dim,
        };
        if ck.net.spec.input_dim != want_in || ck.net.spec.class_embed_dim != 0 {
            return Err(Error::data("classifier checkpoint has an inconsistent network"));
        }
        Ok(Self {
            kind,
            net: ck.net.clone(),
            schedule,
            dim,
        })
    }
}

/// Cross-entropy training on `x_t = forward_marginal(x0, t, eps)` with
/// `t ~ U{1..T}`.
pub fn train_classifier(data: &Dataset, clf: &mut ClassifierNet, cfg: &TrainConfig, seed: u64) -> Result<TrainReport> {
    if data.dim() != clf.dim {
        return Err(Error::config("dataset dimension does not match classifier"));
    }
    if data.is_empty() || cfg.batch_size > data.len() {
        return Err(Error::config("batch size exceeds dataset size"));
    }
    if data.num_classes() > clf.num_classes() {
        return Err(Error::config("dataset has more classes than the classifier"));
    }
    let steps = clf.schedule.steps();
    let dim = clf.dim;
    let batch = cfg.batch_size;
    let kind = clf.kind;
    let schedule = clf.schedule.clone();
    fit(&mut clf.net, cfg, |net, step| {
        let mut r = rng::stream(seed, "classifier-batch", step as u64);
        let examples: Vec<(usize, usize, Vec<f64>)> = (0..batch)
            .map(|_| {
                let i = r.gen_range(0..data.len());
                let t = r.gen_range(1..=steps);
                (i, t, rng::normal_vec(&mut r, dim))
            })
            .collect();
        let scale = 1.0 / batch as f64;
        let (loss, grad) = exec::reduce_grad(
            batch,
            net.params.len(),
            || net.scratch(),
            |s, k, g| {
                let (i, t, noise) = &examples[k];
                let mut xt = marginal_coeffs(schedule.alpha_bar(*t), data.point(*i), noise);
                let tau = schedule.normalized(*t);
                if kind == ClassifierKind::Linear {
                    xt.push(tau);
                }
                let label = data.label(*i);
                net.backprop_with(s, &xt, tau, ClassInput::None, Some(g), None, |logits, cot| {
                    let lse = log_sum_exp(logits);
                    for (c, (ck, l)) in cot.iter_mut().zip(logits).enumerate() {
                        let p = (l - lse).exp();
                        *ck = scale * (p - if c == label { 1.0 } else { 0.0 });
                    }
                    lse - logits[label]
                })
            },
        );
        (loss * scale, grad)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_gaussian_1d;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::scaled_linear(100).unwrap()
    }

    #[test]
    fn lse_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let p = softmax(&[-800.0, 0.0, 800.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_gradient_closed_form() {
        let mut clf = ClassifierNet::linear(1, 2, sched(), 0).unwrap();
        // W = [[1.5, 0.2], [-0.5, 0.7]], b = [0.1, -0.3]
        clf.net
            .params
            .values_mut()
            .copy_from_slice(&[1.5, 0.2, -0.5, 0.7, 0.1, -0.3]);
        let (x, t) = (0.4, 30);
        let p = clf.probs(&[x], t);
        for c in 0..2 {
            let (lp, g) = clf.log_prob_grad(&[x], t, c).unwrap();
            assert!((lp - p[c].ln()).abs() < 1e-12);
            let (wc, wo) = if c == 0 { (1.5, -0.5) } else { (-0.5, 1.5) };
            let want = (1.0 - p[c]) * (wc - wo);
            assert!((g[0] - want).abs() < 1e-12, "{} vs {want}", g[0]);
        }
    }

    #[test]
    fn errors_on_bad_arguments() {
        let clf = ClassifierNet::linear(2, 2, sched(), 0).unwrap();
        assert!(clf.log_prob_grad(&[0.0], 5, 0).is_err());
        assert!(clf.log_prob_grad(&[0.0, 0.0], 0, 0).is_err());
        assert!(clf.log_prob_grad(&[0.0, 0.0], 5, 2).is_err());
    }

    #[test]
    fn separable_low_noise_accuracy() {
        let data = gen_gaussian_1d(1.0, 0.05, 2000, 1);
        let mut clf = ClassifierNet::linear(1, 2, sched(), 3).unwrap();
        let cfg = TrainConfig {
            steps: 400,
            batch_size: 256,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        train_classifier(&data, &mut clf, &cfg, 5).unwrap();
        assert!(clf.accuracy(&data, 1, 7) > 0.99);
        // pure-noise input carries no information
        let acc_t = clf.accuracy(&data, 100, 7);
        assert!((acc_t - 0.5).abs() < 0.05, "{acc_t}");
    }

    #[test]
    fn shuffled_labels_give_chance() {
        let base = gen_gaussian_1d(1.0, 0.05, 2000, 1);
        let mut r = rng::stream(0, "shuffle", 0);
        let labels: Vec<usize> = (0..base.len()).map(|_| r.gen_range(0..2)).collect();
        let data = Dataset::from_parts(1, base.coords().to_vec(), labels).unwrap();
        let mut clf = ClassifierNet::linear(1, 2, sched(), 3).unwrap();
        let cfg = TrainConfig {
            steps: 200,
            batch_size: 256,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        train_classifier(&data, &mut clf, &cfg, 5).unwrap();
        let acc = clf.accuracy(&data, 1, 7);
        assert!((acc - 0.5).abs() < 0.03, "{acc}");
    }

    #[test]
    fn checkpoint_round_trip() {
        for kind in [ClassifierKind::Linear, ClassifierKind::Mlp] {
            let clf = ClassifierNet::new(kind, 2, 2, &Architecture::small(8, 2, 4), sched(), 1).unwrap();
            let ck = Checkpoint::read_from(&clf.to_checkpoint().to_bytes()[..]).unwrap();
            assert_eq!(ClassifierNet::from_checkpoint(&ck).unwrap(), clf);
        }
    }
}
