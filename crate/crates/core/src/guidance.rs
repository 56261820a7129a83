//! Vanilla conditional sampling, classifier guidance and classifier-free
//! guidance over a shared [`NoiseBank`].

use std::fmt;
use std::str::FromStr;

use crate::classifier::ClassifierNet;
use crate::data::Dataset;
use crate::diffusion::{reverse_chain, DenoiserKind, DenoiserNet, NoiseBank, Trajectory};
use crate::nn::ClassInput;
use crate::{exec, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceMode {
    Vanilla,
    ClassifierGuidance,
    ClassifierFree,
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuidanceMode::Vanilla => "vanilla",
            GuidanceMode::ClassifierGuidance => "cg",
            GuidanceMode::ClassifierFree => "cfg",
        })
    }
}

impl FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(GuidanceMode::Vanilla),
            "cg" | "classifier" => Ok(GuidanceMode::ClassifierGuidance),
            "cfg" | "classifier-free" => Ok(GuidanceMode::ClassifierFree),
            other => Err(Error::config(format!("unknown guidance mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    /// Guidance scale `w >= 0`; ignored in vanilla mode.
    pub scale: f64,
    pub class_id: usize,
}

impl GuidanceConfig {
    pub fn vanilla(class_id: usize) -> Self {
        Self {
            mode: GuidanceMode::Vanilla,
            scale: 1.0,
            class_id,
        }
    }

    pub fn cg(scale: f64, class_id: usize) -> Self {
        Self {
            mode: GuidanceMode::ClassifierGuidance,
            scale,
            class_id,
        }
    }

    pub fn cfg(scale: f64, class_id: usize) -> Self {
        Self {
            mode: GuidanceMode::ClassifierFree,
            scale,
            class_id,
        }
    }
}

/// `eps - w sqrt(1 - alpha_bar) grad log p(c | x_t)`, written to `out`.
pub fn combine_cg(eps: &[f64], alpha_bar: f64, grad: &[f64], w: f64, out: &mut [f64]) {
    let k = w * (1.0 - alpha_bar).sqrt();
    for ((o, e), g) in out.iter_mut().zip(eps).zip(grad) {
        *o = e - k * g;
    }
}

/// `eps_u + w (eps_c - eps_u)`, evaluated as `(1 - w) eps_u + w eps_c` so that
/// `w = 1` returns `eps_c` and `w = 0` returns `eps_u` bit for bit.
pub fn combine_cfg(eps_uncond: &[f64], eps_cond: &[f64], w: f64, out: &mut [f64]) {
    for ((o, u), c) in out.iter_mut().zip(eps_uncond).zip(eps_cond) {
        *o = (1.0 - w) * u + w * c;
    }
}

fn unconditional_input(den: &DenoiserNet) -> Result<ClassInput> {
    match den.kind {
        DenoiserKind::Unconditional => Ok(ClassInput::None),
        DenoiserKind::ClassifierFree => Ok(ClassInput::Null),
        DenoiserKind::Conditional => Err(Error::config(
            "classifier guidance needs an unconditional (or null-class) denoiser",
        )),
    }
}

fn check_classifier(den: &DenoiserNet, clf: &ClassifierNet) -> Result<()> {
    if clf.dim() != den.dim() {
        return Err(Error::config("classifier and denoiser dimensions differ"));
    }
    if clf.schedule != den.schedule {
        return Err(Error::config("classifier and denoiser use different noise schedules"));
    }
    Ok(())
}

pub fn guided_epsilon_cg(
    den: &DenoiserNet,
    clf: &ClassifierNet,
    x: &[f64],
    t: usize,
    c: usize,
    w: f64,
) -> Result<Vec<f64>> {
    check_classifier(den, clf)?;
    let eps = den.eps(x, t, unconditional_input(den)?);
    let (_, grad) = clf.log_prob_grad(x, t, c)?;
    let mut out = vec![0.0; eps.len()];
    combine_cg(&eps, den.schedule.alpha_bar(t), &grad, w, &mut out);
    Ok(out)
}

pub fn guided_epsilon_cfg(den: &DenoiserNet, x: &[f64], t: usize, c: usize, w: f64) -> Result<Vec<f64>> {
    if den.kind != DenoiserKind::ClassifierFree {
        return Err(Error::config("classifier-free guidance needs a dropout-trained denoiser"));
    }
    den.schedule.check_step(t)?;
    let cond = den.class_input(Some(c))?;
    let eps_u = den.eps(x, t, ClassInput::Null);
    let eps_c = den.eps(x, t, cond);
    let mut out = vec![0.0; eps_u.len()];
    combine_cfg(&eps_u, &eps_c, w, &mut out);
    Ok(out)
}

/// Output of [`sample_guided`].
#[derive(Debug, Clone)]
pub struct GuidedRun {
    pub config: GuidanceConfig,
    pub bank_seed: u64,
    /// Final samples, labeled with the guided class.
    pub samples: Dataset,
    pub trajectories: Option<Vec<Trajectory>>,
}

fn validate(den: &DenoiserNet, clf: Option<&ClassifierNet>, config: &GuidanceConfig) -> Result<()> {
    if !(config.scale >= 0.0 && config.scale.is_finite()) {
        return Err(Error::config(format!("guidance scale {} must be finite and >= 0", config.scale)));
    }
    match config.mode {
        GuidanceMode::Vanilla => {
            den.class_input(Some(config.class_id))?;
        }
        GuidanceMode::ClassifierFree => {
            if den.kind != DenoiserKind::ClassifierFree {
                return Err(Error::config("classifier-free guidance needs a dropout-trained denoiser"));
            }
            den.class_input(Some(config.class_id))?;
        }
        GuidanceMode::ClassifierGuidance => {
            let clf = clf.ok_or_else(|| Error::config("classifier guidance requires a classifier"))?;
            unconditional_input(den)?;
            check_classifier(den, clf)?;
            if config.class_id >= clf.num_classes() {
                return Err(Error::config(format!("class {} out of range", config.class_id)));
            }
        }
    }
    Ok(())
}

/// Run `n_chains` reverse chains under `config`.
///
/// Chains read their initial state and per-step noise from `bank` (or from a
/// fresh bank built from `seed`), so runs that share a bank differ only
/// through their noise predictions.
pub fn sample_guided(
    den: &DenoiserNet,
    clf: Option<&ClassifierNet>,
    config: GuidanceConfig,
    n_chains: usize,
    seed: u64,
    bank: Option<&NoiseBank>,
    record_trajectories: bool,
) -> Result<GuidedRun> {
    validate(den, clf, &config)?;
    let steps = den.schedule.steps();
    let dim = den.dim();
    let owned;
    let bank = match bank {
        Some(b) => {
            b.check_fits(n_chains, steps, dim)?;
            b
        }
        None => {
            owned = NoiseBank::new(n_chains, steps, dim, seed);
            &owned
        }
    };
    let c = config.class_id;
    let w = config.scale;
    let chains = exec::map_range(n_chains, |chain| {
        let mut s = den.net.scratch();
        let mut tmp = vec![0.0; dim];
        match config.mode {
            GuidanceMode::Vanilla => {
                let input = ClassInput::Label(c);
                reverse_chain(
                    &den.schedule,
                    bank,
                    chain,
                    |x, t, out| out.copy_from_slice(den.eps_with(&mut s, x, t, input)),
                    record_trajectories,
                )
            }
            GuidanceMode::ClassifierFree => reverse_chain(
                &den.schedule,
                bank,
                chain,
                |x, t, out| {
                    tmp.copy_from_slice(den.eps_with(&mut s, x, t, ClassInput::Null));
                    let eps_c = den.eps_with(&mut s, x, t, ClassInput::Label(c));
                    combine_cfg(&tmp, eps_c, w, out);
                },
                record_trajectories,
            ),
            GuidanceMode::ClassifierGuidance => {
                let clf = clf.expect("validated");
                let mut cs = clf.scratch();
                let uncond = unconditional_input(den).expect("validated");
                let mut grad = vec![0.0; dim];
                reverse_chain(
                    &den.schedule,
                    bank,
                    chain,
                    |x, t, out| {
                        clf.log_prob_grad_with(&mut cs, x, t, c, &mut grad);
                        let eps = den.eps_with(&mut s, x, t, uncond);
                        combine_cg(eps, den.schedule.alpha_bar(t), &grad, w, out);
                    },
                    record_trajectories,
                )
            }
        }
    });
    let mut samples = Dataset::new(dim);
    let mut trajectories = record_trajectories.then(|| Vec::with_capacity(n_chains));
    for (x, traj) in chains {
        samples.push(&x, c);
        if let (Some(all), Some(tr)) = (trajectories.as_mut(), traj) {
            all.push(tr);
        }
    }
    Ok(GuidedRun {
        config,
        bank_seed: bank.seed(),
        samples,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::NoiseSchedule;
    use crate::nn::Architecture;

    fn arch() -> Architecture {
        Architecture::small(8, 2, 4)
    }

    fn sched() -> NoiseSchedule {
        NoiseSchedule::scaled_linear(30).unwrap()
    }

    #[test]
    fn combination_arithmetic() {
        let mut out = [0.0];
        combine_cg(&[0.2], 0.36, &[0.5], 4.0, &mut out);
        assert!((out[0] + 1.4).abs() < 1e-12);
        combine_cfg(&[0.1], &[0.5], 2.5, &mut out);
        assert!((out[0] - 1.1).abs() < 1e-12);
        combine_cfg(&[0.123], &[-0.77], 1.0, &mut out);
        assert_eq!(out[0], -0.77);
        combine_cfg(&[0.123], &[-0.77], 0.0, &mut out);
        assert_eq!(out[0], 0.123);
        combine_cg(&[0.3], 0.5, &[7.0], 0.0, &mut out);
        assert_eq!(out[0], 0.3);
    }

    #[test]
    fn cfg_degenerate_scales_are_exact() {
        let den = DenoiserNet::new(DenoiserKind::ClassifierFree, 1, 2, &arch(), sched(), 0.1, 3).unwrap();
        let x = [0.37];
        let cond = den.eps(&x, 12, ClassInput::Label(1));
        let uncond = den.eps(&x, 12, ClassInput::Null);
        assert_eq!(guided_epsilon_cfg(&den, &x, 12, 1, 1.0).unwrap(), cond);
        assert_eq!(guided_epsilon_cfg(&den, &x, 12, 1, 0.0).unwrap(), uncond);
    }

    #[test]
    fn uniform_classifier_leaves_prediction_unchanged() {
        let den = DenoiserNet::new(DenoiserKind::Unconditional, 1, 0, &arch(), sched(), 0.0, 3).unwrap();
        let mut clf = ClassifierNet::linear(1, 2, sched(), 1).unwrap();
        clf.net.params.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let x = [0.8];
        let plain = den.eps(&x, 5, ClassInput::None);
        for w in [0.0, 1.0, 7.5] {
            assert_eq!(guided_epsilon_cg(&den, &clf, &x, 5, 0, w).unwrap(), plain);
        }
    }

    #[test]
    fn vanilla_matches_cfg_at_unit_scale() {
        let den = DenoiserNet::new(DenoiserKind::ClassifierFree, 1, 2, &arch(), sched(), 0.1, 3).unwrap();
        let bank = NoiseBank::new(16, 30, 1, 99);
        let a = sample_guided(&den, None, GuidanceConfig::vanilla(0), 16, 0, Some(&bank), true).unwrap();
        let b = sample_guided(&den, None, GuidanceConfig::cfg(1.0, 0), 16, 0, Some(&bank), true).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.trajectories, b.trajectories);
        let tr = a.trajectories.unwrap();
        assert_eq!(tr.len(), 16);
        assert!(tr.iter().all(|t| t.states.len() == 31));
        assert_eq!(tr[3].states[0], bank.initial(3));
    }

    #[test]
    fn cg_at_zero_scale_is_plain_unconditional() {
        let den = DenoiserNet::new(DenoiserKind::Unconditional, 1, 0, &arch(), sched(), 0.0, 3).unwrap();
        let clf = ClassifierNet::linear(1, 2, sched(), 1).unwrap();
        let run = sample_guided(&den, Some(&clf), GuidanceConfig::cg(0.0, 1), 4, 21, None, false).unwrap();
        for chain in 0..4 {
            let bank = NoiseBank::new(4, 30, 1, 21);
            let mut s = den.net.scratch();
            let (x, _) = reverse_chain(
                &den.schedule,
                &bank,
                chain,
                |x, t, out| out.copy_from_slice(den.eps_with(&mut s, x, t, ClassInput::None)),
                false,
            );
            assert_eq!(run.samples.point(chain), &x[..]);
        }
    }

    #[test]
    fn configuration_errors() {
        let uncond = DenoiserNet::new(DenoiserKind::Unconditional, 1, 0, &arch(), sched(), 0.0, 3).unwrap();
        let cond = DenoiserNet::new(DenoiserKind::Conditional, 1, 2, &arch(), sched(), 0.0, 3).unwrap();
        let run = |den: &DenoiserNet, clf: Option<&ClassifierNet>, cfg| sample_guided(den, clf, cfg, 2, 0, None, false);
        assert!(matches!(run(&uncond, None, GuidanceConfig::cg(1.0, 0)), Err(Error::Config(_))));
        assert!(run(&cond, None, GuidanceConfig::cfg(2.0, 0)).is_err());
        assert!(run(&uncond, None, GuidanceConfig::vanilla(0)).is_err());
        assert!(run(&cond, None, GuidanceConfig::vanilla(5)).is_err());
        let clf = ClassifierNet::linear(1, 2, NoiseSchedule::scaled_linear(50).unwrap(), 0).unwrap();
        assert!(run(&uncond, Some(&clf), GuidanceConfig::cg(1.0, 0)).is_err());
        assert!(run(&cond, None, GuidanceConfig { scale: -1.0, ..GuidanceConfig::vanilla(0) }).is_err());
        let bank = NoiseBank::new(1, 30, 1, 0);
        assert!(sample_guided(&cond, None, GuidanceConfig::vanilla(0), 2, 0, Some(&bank), false).is_err());
    }
}
