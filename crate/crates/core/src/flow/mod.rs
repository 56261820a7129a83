//! Flow-matching postprocessor: a velocity field trained to move generated
//! samples onto randomly chosen top-k nearest real neighbors, applied by
//! integrating `dz/dt = v(z, c, t)` over `t in [0, 1]`.

pub mod knn;
pub mod ode;
pub mod pairs;

pub use knn::{ClassIndex, Neighbor, NnIndex};
pub use ode::{integrate, OdeMethod};
pub use pairs::{make_training_pairs, mix_equal, FlowPair, PairSampler};

use rand::Rng;

use crate::data::Dataset;
use crate::nn::{fit, Architecture, Checkpoint, ClassInput, Net, Scratch, TrainConfig, TrainReport, TIME_SCALE};
use crate::{exec, rng, Error, Result};

pub const CHECKPOINT_KIND: &str = "flow";
pub const DEFAULT_K: usize = 20;
pub const DEFAULT_ODE_STEPS: usize = 50;

/// Flow time is embedded as `t * FLOW_TIME_SCALE`, keeping the sinusoidal
/// features slow enough to stay smooth between solver stages.
pub const FLOW_TIME_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowNet {
    pub net: Net,
    pub conditional: bool,
    /// Size of the top-k target pool the net was trained with.
    pub k: usize,
}

impl FlowNet {
    /// `num_classes = None` builds an unconditional field.
    pub fn new(dim: usize, num_classes: Option<usize>, arch: &Architecture, k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        let spec = arch.spec(dim, dim, num_classes.map(|n| (n, false)));
        Ok(Self {
            net: Net::new(spec, seed)?,
            conditional: num_classes.is_some(),
            k,
        })
    }

    pub fn dim(&self) -> usize {
        self.net.spec.input_dim
    }

    fn class_input(&self, c: usize) -> ClassInput {
        if self.conditional {
            ClassInput::Label(c)
        } else {
            ClassInput::None
        }
    }

    fn net_time(t: f64) -> f64 {
        t * FLOW_TIME_SCALE / TIME_SCALE
    }

    pub fn velocity_with<'s>(&self, s: &'s mut Scratch, z: &[f64], c: usize, t: f64) -> &'s [f64] {
        self.net.eval_with(s, z, Self::net_time(t), self.class_input(c))
    }

    pub fn velocity(&self, z: &[f64], c: usize, t: f64) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::config("state dimension does not match the flow"));
        }
        self.check_class(c)?;
        Ok(self.velocity_with(&mut self.net.scratch(), z, c, t).to_vec())
    }

    fn check_class(&self, c: usize) -> Result<()> {
        self.net.check_class(self.class_input(c))
    }

    /// Squared-error loss `|v(z_t, c, t) - (target - source)|^2` of one pair
    /// at time `t`, adding `scale` times its parameter gradient to `grad`.
    pub fn pair_loss_grad(
        &self,
        s: &mut Scratch,
        pair: &FlowPair,
        t: f64,
        scale: f64,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        pair_objective(&self.net, self.conditional, s, pair, t, scale, grad)
    }

    /// Mean pair loss over `pairs` at the paired times.
    pub fn mean_loss(&self, pairs: &[(FlowPair, f64)]) -> f64 {
        let losses = exec::map_range(pairs.len(), |i| {
            let (p, t) = &pairs[i];
            self.pair_loss_grad(&mut self.net.scratch(), p, *t, 0.0, None)
        });
        exec::mean(&losses)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(CHECKPOINT_KIND, self.net.clone())
            .with_meta("conditional", self.conditional)
            .with_meta("k", self.k)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let conditional: bool = ck.meta_parse("conditional")?;
        let spec = &ck.net.spec;
        if spec.input_dim != spec.output_dim || conditional != (spec.class_embed_dim > 0) || spec.null_class {
            return Err(Error::data("checkpoint network does not fit a flow"));
        }
        let k: usize = ck.meta_parse("k")?;
        if k == 0 {
            return Err(Error::data("flow checkpoint records k = 0"));
        }
        Ok(Self {
            net: ck.net.clone(),
            conditional,
            k,
        })
    }
}

fn pair_objective(
    net: &Net,
    conditional: bool,
    s: &mut Scratch,
    pair: &FlowPair,
    t: f64,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let mut z = vec![0.0; pair.source.len()];
    pair.interpolate(t, &mut z);
    let target = pair.displacement();
    let class = if conditional { ClassInput::Label(pair.label) } else { ClassInput::None };
    net.backprop_with(s, &z, FlowNet::net_time(t), class, grad, None, |out, cot| {
        let mut l = 0.0;
        for ((c, o), d) in cot.iter_mut().zip(out).zip(&target) {
            let e = o - d;
            l += e * e;
            *c = 2.0 * e * scale;
        }
        l
    })
}

/// Draw `n` training pairs with times `t ~ U[0, 1]`.
pub fn draw_pairs<R: Rng + ?Sized>(sampler: &PairSampler, n: usize, r: &mut R) -> Vec<(FlowPair, f64)> {
    (0..n)
        .map(|_| {
            let p = sampler.draw(r);
            let t = r.gen::<f64>();
            (p, t)
        })
        .collect()
}

/// Minimize the mean pair loss with fresh pairs, targets and times every step.
pub fn train_flow(sampler: &PairSampler, flow: &mut FlowNet, cfg: &TrainConfig, seed: u64) -> Result<TrainReport> {
    if sampler.is_empty() {
        return Err(Error::data("no training pairs"));
    }
    if sampler.dim() != flow.dim() {
        return Err(Error::config("pair dimension does not match the flow"));
    }
    if flow.conditional {
        let n = sampler.sources().num_classes();
        flow.check_class(n - 1)?;
    }
    let batch = cfg.batch_size;
    let conditional = flow.conditional;
    fit(&mut flow.net, cfg, |net, step| {
        let mut r = rng::stream(seed, "flow-batch", step as u64);
        let pairs = draw_pairs(sampler, batch, &mut r);
        let scale = 1.0 / batch as f64;
        let (loss, grad) = exec::reduce_grad(
            batch,
            net.params.len(),
            || net.scratch(),
            |s, i, g| {
                let (p, t) = &pairs[i];
                pair_objective(net, conditional, s, p, *t, scale, Some(g))
            },
        );
        (loss * scale, grad)
    })
}

/// Transport `z0` (class `c`) from `t = 0` to `t = 1`.
pub fn integrate_flow(flow: &FlowNet, z0: &[f64], c: usize, n_steps: usize, method: OdeMethod) -> Result<Vec<f64>> {
    if z0.len() != flow.dim() {
        return Err(Error::config("sample dimension does not match the flow"));
    }
    flow.check_class(c)?;
    let mut s = flow.net.scratch();
    integrate(z0, n_steps, method, |z, t, out| {
        out.copy_from_slice(flow.velocity_with(&mut s, z, c, t))
    })
}

/// Integrate every sample under its own label. Order is preserved.
pub fn postprocess(samples: &Dataset, flow: &FlowNet, n_steps: usize, method: OdeMethod) -> Result<Dataset> {
    let moved = exec::map_range(samples.len(), |i| {
        integrate_flow(flow, samples.point(i), samples.label(i), n_steps, method)
    });
    let mut out = Dataset::new(samples.dim());
    for (i, z) in moved.into_iter().enumerate() {
        out.push(&z?, samples.label(i));
    }
    Ok(out)
}
