use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::schedule::{marginal_coeffs, NoiseSchedule};
use crate::data::Dataset;
use crate::nn::net::Scratch;
use crate::nn::train::{fit, TrainConfig, TrainReport};
use crate::nn::{Architecture, Checkpoint, ClassInput, Net};
use crate::{exec, rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiserKind {
    Unconditional,
    Conditional,
    /// Conditional with a null-class row, trained with condition dropout.
    ClassifierFree,
}

impl DenoiserKind {
    pub fn tag(self) -> &'static str {
        match self {
            DenoiserKind::Unconditional => "denoiser-uncond",
            DenoiserKind::Conditional => "denoiser-cond",
            DenoiserKind::ClassifierFree => "denoiser-cfg",
        }
    }
}

impl fmt::Display for DenoiserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for DenoiserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "denoiser-uncond" | "uncond" => Ok(DenoiserKind::Unconditional),
            "denoiser-cond" | "cond" => Ok(DenoiserKind::Conditional),
            "denoiser-cfg" | "cfg" => Ok(DenoiserKind::ClassifierFree),
            other => Err(Error::config(format!("unknown denoiser kind '{other}'"))),
        }
    }
}

/// Noise estimator `eps(x_t, t, c)` with its schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    pub kind: DenoiserKind,
    pub net: Net,
    pub schedule: NoiseSchedule,
    /// Probability of replacing a label by the null class during training.
    pub dropout_prob: f64,
}

impl DenoiserNet {
    pub fn new(
        kind: DenoiserKind,
        dim: usize,
        num_classes: usize,
        arch: &Architecture,
        schedule: NoiseSchedule,
        dropout_prob: f64,
        seed: u64,
    ) -> Result<Self> {
        let classes = match kind {
            DenoiserKind::Unconditional => None,
            DenoiserKind::Conditional => Some((num_classes, false)),
            DenoiserKind::ClassifierFree => Some((num_classes, true)),
        };
        if classes.is_some() && (num_classes == 0 || arch.class_embed_dim == 0) {
            return Err(Error::config("conditional denoisers need classes and a class embedding"));
        }
        if !(0.0..1.0).contains(&dropout_prob) {
            return Err(Error::config("dropout_prob must lie in [0, 1)"));
        }
        if kind != DenoiserKind::ClassifierFree && dropout_prob > 0.0 {
            return Err(Error::config("condition dropout needs a classifier-free denoiser"));
        }
        let net = Net::new(arch.spec(dim, dim, classes), seed)?;
        Ok(Self {
            kind,
            net,
            schedule,
            dropout_prob,
        })
    }

    pub fn dim(&self) -> usize {
        self.net.spec.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.net.spec.num_classes
    }

    /// Condition for label `c`; `None` asks for the unconditional prediction.
    pub fn class_input(&self, c: Option<usize>) -> Result<ClassInput> {
        let input = match (self.kind, c) {
            (DenoiserKind::Unconditional, None) => ClassInput::None,
            (DenoiserKind::Unconditional, Some(_)) => {
                return Err(Error::config("unconditional denoiser cannot take a class"))
            }
            (_, Some(c)) => ClassInput::Label(c),
            (DenoiserKind::ClassifierFree, None) => ClassInput::Null,
            (DenoiserKind::Conditional, None) => {
                return Err(Error::config("conditional denoiser needs a class"))
            }
        };
        self.net.check_class(input)?;
        Ok(input)
    }

    pub fn eps_with<'s>(&self, s: &'s mut Scratch, x: &[f64], t: usize, class: ClassInput) -> &'s [f64] {
        self.net.eval_with(s, x, self.schedule.normalized(t), class)
    }

    pub fn eps(&self, x: &[f64], t: usize, class: ClassInput) -> Vec<f64> {
        self.net.eval(x, self.schedule.normalized(t), class)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.kind.tag(), self.net.clone())
            .with_meta("schedule_steps", self.schedule.steps())
            .with_meta("beta_start", self.schedule.first_beta())
            .with_meta("beta_end", self.schedule.last_beta())
            .with_meta("dropout_prob", self.dropout_prob)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind: DenoiserKind = ck.kind.parse()?;
        let schedule = NoiseSchedule::linear(
            ck.meta_parse("schedule_steps")?,
            ck.meta_parse("beta_start")?,
            ck.meta_parse("beta_end")?,
        )?;
        let spec = &ck.net.spec;
        if spec.input_dim != spec.output_dim {
            return Err(Error::config("denoiser output must match its input dimension"));
        }
        let conditional = spec.class_embed_dim > 0;
        if conditional != (kind != DenoiserKind::Unconditional)
            || spec.null_class != (kind == DenoiserKind::ClassifierFree)
        {
            return Err(Error::data(format!("checkpoint network does not fit kind {kind}")));
        }
        Ok(Self {
            kind,
            net: ck.net.clone(),
            schedule,
            dropout_prob: ck.meta_parse("dropout_prob")?,
        })
    }
}

/// Keep `label` or, with probability `p`, swap it for the null class.
pub fn draw_condition<R: Rng + ?Sized>(rng: &mut R, label: usize, p: f64) -> ClassInput {
    if p > 0.0 && rng.gen::<f64>() < p {
        ClassInput::Null
    } else {
        ClassInput::Label(label)
    }
}

struct Example {
    index: usize,
    t: usize,
    noise: Vec<f64>,
    class: ClassInput,
}

/// Minimize `E ||eps - eps_theta(x_t, t, c)||^2` with `t ~ U{1..T}` and
/// `eps ~ N(0, I)`. Each minibatch is a pure function of `(seed, step)`.
pub fn train_denoiser(data: &Dataset, den: &mut DenoiserNet, cfg: &TrainConfig, seed: u64) -> Result<TrainReport> {
    if data.dim() != den.dim() {
        return Err(Error::config(format!(
            "dataset dimension {} does not match denoiser dimension {}",
            data.dim(),
            den.dim()
        )));
    }
    if data.is_empty() || cfg.batch_size > data.len() {
        return Err(Error::config(format!(
            "batch size {} exceeds dataset size {}",
            cfg.batch_size,
            data.len()
        )));
    }
    if den.kind != DenoiserKind::Unconditional && data.num_classes() > den.num_classes() {
        return Err(Error::config("dataset has more classes than the denoiser"));
    }
    let steps = den.schedule.steps();
    let kind = den.kind;
    let p = den.dropout_prob;
    let dim = data.dim();
    let batch = cfg.batch_size;
    fit(&mut den.net, cfg, |net, step| {
        let mut r = rng::stream(seed, "denoiser-batch", step as u64);
        let examples: Vec<Example> = (0..batch)
            .map(|_| {
                let index = r.gen_range(0..data.len());
                let t = r.gen_range(1..=steps);
                let noise = rng::normal_vec(&mut r, dim);
                let class = match kind {
                    DenoiserKind::Unconditional => ClassInput::None,
                    DenoiserKind::Conditional => ClassInput::Label(data.label(index)),
                    DenoiserKind::ClassifierFree => draw_condition(&mut r, data.label(index), p),
                };
                Example { index, t, noise, class }
            })
            .collect();
        let scale = 1.0 / batch as f64;
        let schedule = &den.schedule;
        let (loss, grad) = exec::reduce_grad(
            batch,
            net.params.len(),
            || net.scratch(),
            |s, i, g| {
                let ex = &examples[i];
                let xt = marginal_coeffs(schedule.alpha_bar(ex.t), data.point(ex.index), &ex.noise);
                net.backprop_with(s, &xt, schedule.normalized(ex.t), ex.class, Some(g), None, |out, cot| {
                    let mut l = 0.0;
                    for ((c, o), e) in cot.iter_mut().zip(out).zip(&ex.noise) {
                        let d = o - e;
                        l += d * d;
                        *c = 2.0 * d * scale;
                    }
                    l
                })
            },
        );
        (loss * scale, grad)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> Architecture {
        Architecture::small(16, 2, 8)
    }

    #[test]
    fn dropout_rate() {
        let mut r = rng::stream(0, "dropout-test", 0);
        let n = 100_000;
        let nulls = (0..n)
            .filter(|_| draw_condition(&mut r, 1, 0.1) == ClassInput::Null)
            .count();
        let rate = nulls as f64 / n as f64;
        assert!((rate - 0.1).abs() < 0.01, "{rate}");
        assert_eq!(draw_condition(&mut r, 1, 0.0), ClassInput::Label(1));
    }

    #[test]
    fn single_point_loss_decreases() {
        let mut data = Dataset::new(1);
        for _ in 0..64 {
            data.push(&[0.5], 0);
        }
        let sched = NoiseSchedule::from_betas(vec![0.9995]).unwrap();
        let mut den =
            DenoiserNet::new(DenoiserKind::Unconditional, 1, 0, &tiny_arch(), sched, 0.0, 1).unwrap();
        let cfg = TrainConfig {
            steps: 100,
            batch_size: 64,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let rep = train_denoiser(&data, &mut den, &cfg, 2).unwrap();
        let first: f64 = rep.losses[..10].iter().sum::<f64>() / 10.0;
        let last: f64 = rep.losses[90..].iter().sum::<f64>() / 10.0;
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn class_inputs() {
        let sched = NoiseSchedule::scaled_linear(40).unwrap();
        let cfg = DenoiserNet::new(DenoiserKind::ClassifierFree, 1, 2, &tiny_arch(), sched.clone(), 0.1, 0).unwrap();
        assert_eq!(cfg.class_input(None).unwrap(), ClassInput::Null);
        assert_eq!(cfg.class_input(Some(1)).unwrap(), ClassInput::Label(1));
        assert!(cfg.class_input(Some(2)).is_err());
        let cond = DenoiserNet::new(DenoiserKind::Conditional, 1, 2, &tiny_arch(), sched.clone(), 0.0, 0).unwrap();
        assert!(cond.class_input(None).is_err());
        assert!(DenoiserNet::new(DenoiserKind::Conditional, 1, 2, &tiny_arch(), sched, 0.1, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let sched = NoiseSchedule::scaled_linear(40).unwrap();
        let den = DenoiserNet::new(DenoiserKind::ClassifierFree, 2, 2, &tiny_arch(), sched, 0.1, 4).unwrap();
        let ck = Checkpoint::read_from(&den.to_checkpoint().to_bytes()[..]).unwrap();
        assert_eq!(DenoiserNet::from_checkpoint(&ck).unwrap(), den);
    }

    #[test]
    fn batch_larger_than_data_rejected() {
        let data = Dataset::from_parts(1, vec![0.0; 4], vec![0; 4]).unwrap();
        let sched = NoiseSchedule::scaled_linear(40).unwrap();
        let mut den = DenoiserNet::new(DenoiserKind::Unconditional, 1, 0, &tiny_arch(), sched, 0.0, 0).unwrap();
        let cfg = TrainConfig {
            steps: 1,
            batch_size: 8,
            ..TrainConfig::default()
        };
        assert!(matches!(train_denoiser(&data, &mut den, &cfg, 0), Err(Error::Config(_))));
    }
}
