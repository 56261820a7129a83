//! Fixed-topology MLP with exact reverse-mode gradients.
//!
//! The first layer reads the concatenation `[x, t_embed, c_embed]`, which is
//! the same as projecting each part separately and summing the projections
//! into the first hidden pre-activation. Hidden layers apply the activation;
//! the output layer is affine.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use super::params::{Layout, ParamVector};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Silu => "silu",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "silu" => Ok(Activation::Silu),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::config(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub time_embed_dim: usize,
    pub class_embed_dim: usize,
    pub num_classes: usize,
    /// Reserve an extra embedding row for the dropped ("null") condition.
    pub null_class: bool,
}

impl MlpSpec {
    /// Single affine layer, no embeddings.
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: Vec::new(),
            output_dim,
            activation: Activation::Silu,
            time_embed_dim: 0,
            class_embed_dim: 0,
            num_classes: 0,
            null_class: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::config("input_dim and output_dim must be positive"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::config("time_embed_dim must be even"));
        }
        if self.class_embed_dim > 0 && self.num_classes == 0 {
            return Err(Error::config("class_embed_dim > 0 requires num_classes > 0"));
        }
        Ok(())
    }

    pub fn first_layer_inputs(&self) -> usize {
        self.input_dim + self.time_embed_dim + self.class_embed_dim
    }

    /// Rows in the class embedding table (0 when there is no table).
    pub fn class_rows(&self) -> usize {
        if self.class_embed_dim == 0 {
            0
        } else {
            self.num_classes + usize::from(self.null_class)
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.first_layer_inputs());
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.output_dim);
        w
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn layout(&self) -> Layout {
        let widths = self.widths();
        let mut b = Layout::builder();
        for (l, pair) in widths.windows(2).enumerate() {
            b = b
                .push(format!("layer{l}.weight"), &[pair[1], pair[0]])
                .push(format!("layer{l}.bias"), &[pair[1]]);
        }
        if self.class_rows() > 0 {
            b = b.push("class_table", &[self.class_rows(), self.class_embed_dim]);
        }
        b.build()
    }

    /// Uniform fan-in weights, zero biases, unit-range class embeddings.
    pub fn init_params(&self, seed: u64) -> Result<ParamVector> {
        self.validate()?;
        let layout = Arc::new(self.layout());
        let mut params = ParamVector::zeros(layout.clone());
        let mut rng = rng::stream(seed, "mlp-init", 0);
        for entry in layout.entries() {
            let vals = &mut params.values_mut()[entry.range()];
            if entry.name.ends_with(".weight") {
                let fan_in = entry.shape[1] as f64;
                let limit = (6.0 / fan_in).sqrt();
                vals.iter_mut().for_each(|v| *v = rng::uniform(&mut rng, -limit, limit));
            } else if entry.name == "class_table" {
                vals.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            }
        }
        Ok(params)
    }

    /// Byte offsets of each layer's (weight, bias) in the flat buffer.
    fn layer_offsets(&self) -> Vec<(usize, usize, usize, usize)> {
        let widths = self.widths();
        let mut off = 0;
        widths
            .windows(2)
            .map(|p| {
                let (fan_in, fan_out) = (p[0], p[1]);
                let w = off;
                let b = off + fan_in * fan_out;
                off = b + fan_out;
                (w, b, fan_in, fan_out)
            })
            .collect()
    }

    pub fn new_tape(&self) -> Tape {
        Tape::new(self)
    }

    /// Forward pass over a concatenated input, recording activations.
    pub fn forward_tape<'t>(&self, params: &[f64], input: &[f64], tape: &'t mut Tape) -> &'t [f64] {
        debug_assert_eq!(input.len(), self.first_layer_inputs());
        tape.acts[0].copy_from_slice(input);
        let n_layers = tape.offsets.len();
        for l in 0..n_layers {
            let (w, b, fan_in, fan_out) = tape.offsets[l];
            let weights = &params[w..w + fan_in * fan_out];
            let bias = &params[b..b + fan_out];
            let (head, tail) = tape.acts.split_at_mut(l + 1);
            let a_in = &head[l];
            let a_out = &mut tail[0];
            let hidden = l + 1 < n_layers;
            for o in 0..fan_out {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let z = bias[o] + dot(row, a_in);
                if hidden {
                    tape.pre[l][o] = z;
                    a_out[o] = self.activation.apply(z);
                } else {
                    a_out[o] = z;
                }
            }
        }
        &tape.acts[n_layers]
    }

    /// Accumulate the gradient of `<cotangent, output>` into `grad_params`
    /// (when given) and, if given, write the gradient with respect to the concatenated
    /// input into `grad_input`. Uses the activations left by the last
    /// [`forward_tape`](Self::forward_tape) on `tape`.
    pub fn backward_tape(
        &self,
        params: &[f64],
        tape: &mut Tape,
        cotangent: &[f64],
        mut grad_params: Option<&mut [f64]>,
        grad_input: Option<&mut [f64]>,
    ) {
        let n_layers = tape.offsets.len();
        tape.delta[n_layers].copy_from_slice(cotangent);
        for l in (0..n_layers).rev() {
            let (w, b, fan_in, fan_out) = tape.offsets[l];
            let weights = &params[w..w + fan_in * fan_out];
            let (lower, upper) = tape.delta.split_at_mut(l + 1);
            let d_out = &upper[0];
            let a_in = &tape.acts[l];
            if let Some(gp) = grad_params.as_deref_mut() {
                let (gw, gb) = gp[w..b + fan_out].split_at_mut(fan_in * fan_out);
                for o in 0..fan_out {
                    let d = d_out[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    axpy(d, a_in, &mut gw[o * fan_in..(o + 1) * fan_in]);
                }
            }
            if l == 0 && grad_input.is_none() {
                break;
            }
            let d_in = &mut lower[l];
            d_in.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..fan_out {
                let d = d_out[o];
                if d != 0.0 {
                    axpy(d, &weights[o * fan_in..(o + 1) * fan_in], d_in);
                }
            }
            if l > 0 {
                for (di, &z) in d_in.iter_mut().zip(&tape.pre[l - 1]) {
                    *di *= self.activation.derivative(z);
                }
            }
        }
        if let Some(gi) = grad_input {
            gi.copy_from_slice(&tape.delta[0]);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * i + k] * b[4 * i + k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Scratch buffers for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    offsets: Vec<(usize, usize, usize, usize)>,
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Tape {
    fn new(spec: &MlpSpec) -> Self {
        let widths = spec.widths();
        Self {
            offsets: spec.layer_offsets(),
            acts: widths.iter().map(|&w| vec![0.0; w]).collect(),
            pre: spec.hidden_dims.iter().map(|&w| vec![0.0; w]).collect(),
            delta: widths.iter().map(|&w| vec![0.0; w]).collect(),
        }
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape has at least two layers")
    }
}

/// Gradients returned by [`mlp_backward`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub params: ParamVector,
    pub x: Vec<f64>,
    pub t_embed: Vec<f64>,
    pub c_embed: Vec<f64>,
}

fn check_inputs(
    spec: &MlpSpec,
    params: &ParamVector,
    x: &[f64],
    t_embed: &[f64],
    c_embed: &[f64],
) -> Result<Vec<f64>> {
    spec.validate()?;
    if params.len() != spec.layout().total() {
        return Err(Error::config(format!(
            "parameter vector has {} entries, spec needs {}",
            params.len(),
            spec.layout().total()
        )));
    }
    for (what, got, want) in [
        ("x", x.len(), spec.input_dim),
        ("t_embed", t_embed.len(), spec.time_embed_dim),
        ("c_embed", c_embed.len(), spec.class_embed_dim),
    ] {
        if got != want {
            return Err(Error::config(format!("{what} has dimension {got}, expected {want}")));
        }
    }
    let mut input = Vec::with_capacity(spec.first_layer_inputs());
    input.extend_from_slice(x);
    input.extend_from_slice(t_embed);
    input.extend_from_slice(c_embed);
    Ok(input)
}

pub fn mlp_forward(
    spec: &MlpSpec,
    params: &ParamVector,
    x: &[f64],
    t_embed: &[f64],
    c_embed: &[f64],
) -> Result<Vec<f64>> {
    let input = check_inputs(spec, params, x, t_embed, c_embed)?;
    let mut tape = spec.new_tape();
    Ok(spec.forward_tape(params.values(), &input, &mut tape).to_vec())
}

/// Exact gradients of `<cotangent, mlp_forward(..)>`.
pub fn mlp_backward(
    spec: &MlpSpec,
    params: &ParamVector,
    x: &[f64],
    t_embed: &[f64],
    c_embed: &[f64],
    cotangent: &[f64],
) -> Result<MlpGrads> {
    let input = check_inputs(spec, params, x, t_embed, c_embed)?;
    if cotangent.len() != spec.output_dim {
        return Err(Error::config(format!(
            "cotangent has dimension {}, expected {}",
            cotangent.len(),
            spec.output_dim
        )));
    }
    let mut tape = spec.new_tape();
    spec.forward_tape(params.values(), &input, &mut tape);
    let mut grad = ParamVector::zeros(params.layout().clone());
    let mut grad_in = vec![0.0; input.len()];
    spec.backward_tape(params.values(), &mut tape, cotangent, Some(grad.values_mut()), Some(&mut grad_in));
    let (gx, rest) = grad_in.split_at(spec.input_dim);
    let (gt, gc) = rest.split_at(spec.time_embed_dim);
    Ok(MlpGrads {
        params: grad,
        x: gx.to_vec(),
        t_embed: gt.to_vec(),
        c_embed: gc.to_vec(),
    })
}
