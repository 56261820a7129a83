//! A parameterized MLP together with its conditioning inputs.
//!
//! Callers pass the data vector, a normalized time in `[0, 1]` and a class
//! selector; the net builds `[x, time_embedding(time * TIME_SCALE), class_row]`
//! and routes the class-embedding gradient back into the table.

use std::sync::Arc;

use super::embed::{write_time_embedding, DEFAULT_MAX_PERIOD};
use super::mlp::{MlpSpec, Tape};
use super::params::ParamVector;
use crate::{Error, Result};

/// Normalized time is multiplied by this before the sinusoidal embedding so
/// the fastest frequency resolves individual diffusion steps.
pub const TIME_SCALE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassInput {
    /// The net has no class embedding.
    None,
    Label(usize),
    /// The extra row used when conditioning is dropped.
    Null,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub spec: MlpSpec,
    pub params: ParamVector,
}

#[derive(Debug, Clone)]
pub struct Scratch {
    tape: Tape,
    input: Vec<f64>,
    grad_input: Vec<f64>,
}

impl Net {
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        let params = spec.init_params(seed)?;
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        if params.layout().as_ref() != &spec.layout() {
            return Err(Error::config("parameter layout does not match network spec"));
        }
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = ParamVector::zeros(Arc::new(spec.layout()));
        Ok(Self { spec, params })
    }

    pub fn scratch(&self) -> Scratch {
        let n = self.spec.first_layer_inputs();
        Scratch {
            tape: self.spec.new_tape(),
            input: vec![0.0; n],
            grad_input: vec![0.0; n],
        }
    }

    /// Check a class selector against this net's embedding table.
    pub fn check_class(&self, class: ClassInput) -> Result<()> {
        self.class_row(class).map(|_| ())
    }

    fn class_row(&self, class: ClassInput) -> Result<Option<usize>> {
        let spec = &self.spec;
        match (spec.class_embed_dim > 0, class) {
            (false, ClassInput::None) => Ok(None),
            (false, _) => Err(Error::config("network has no class embedding")),
            (true, ClassInput::None) => Err(Error::config("network requires a class input")),
            (true, ClassInput::Label(c)) if c < spec.num_classes => Ok(Some(c)),
            (true, ClassInput::Label(c)) => Err(Error::config(format!(
                "class {c} out of range for {} classes",
                spec.num_classes
            ))),
            (true, ClassInput::Null) if spec.null_class => Ok(Some(spec.num_classes)),
            (true, ClassInput::Null) => Err(Error::config("network has no null-class row")),
        }
    }

    fn fill_input(&self, s: &mut Scratch, x: &[f64], time: f64, class: ClassInput) -> Option<usize> {
        let spec = &self.spec;
        assert_eq!(x.len(), spec.input_dim, "input dimension mismatch");
        let row = self.class_row(class).expect("invalid class input");
        let (xs, rest) = s.input.split_at_mut(spec.input_dim);
        xs.copy_from_slice(x);
        let (te, ce) = rest.split_at_mut(spec.time_embed_dim);
        if !te.is_empty() {
            write_time_embedding(time * TIME_SCALE, DEFAULT_MAX_PERIOD, te);
        }
        if let Some(r) = row {
            let table = self.params.slice("class_table").expect("class table");
            let d = spec.class_embed_dim;
            ce.copy_from_slice(&table[r * d..(r + 1) * d]);
        }
        row
    }

    /// Forward pass using caller-owned scratch; the output lives in `s`.
    ///
    /// Panics on dimension or class mismatches; validate with
    /// [`check_class`](Self::check_class) at API boundaries.
    pub fn eval_with<'s>(&self, s: &'s mut Scratch, x: &[f64], time: f64, class: ClassInput) -> &'s [f64] {
        self.fill_input(s, x, time, class);
        self.spec.forward_tape(self.params.values(), &s.input, &mut s.tape)
    }

    pub fn eval(&self, x: &[f64], time: f64, class: ClassInput) -> Vec<f64> {
        let mut s = self.scratch();
        self.eval_with(&mut s, x, time, class).to_vec()
    }

    /// Forward then backward for `<cotangent, output>`.
    ///
    /// Parameter gradients (including the class-table row) are added to
    /// `grad_params` when given; the data-input gradient is written to `grad_x`.
    /// `cotangent` is computed from the output by `make_cotangent`, which
    /// also returns the scalar loss passed through to the caller.
    pub fn backprop_with<F>(
        &self,
        s: &mut Scratch,
        x: &[f64],
        time: f64,
        class: ClassInput,
        mut grad_params: Option<&mut [f64]>,
        grad_x: Option<&mut [f64]>,
        make_cotangent: F,
    ) -> f64
    where
        F: FnOnce(&[f64], &mut [f64]) -> f64,
    {
        let row = self.fill_input(s, x, time, class);
        let out = self.spec.forward_tape(self.params.values(), &s.input, &mut s.tape);
        let mut cot = vec![0.0; out.len()];
        let loss = make_cotangent(out, &mut cot);
        let need_input = grad_x.is_some() || row.is_some();
        let gi = if need_input { Some(&mut s.grad_input[..]) } else { None };
        self.spec
            .backward_tape(self.params.values(), &mut s.tape, &cot, grad_params.as_deref_mut(), gi);
        if let (Some(r), Some(grad_params)) = (row, grad_params) {
            let entry = self.params.layout().get("class_table").expect("class table");
            let d = self.spec.class_embed_dim;
            let start = entry.offset + r * d;
            let off = self.spec.input_dim + self.spec.time_embed_dim;
            for (g, v) in grad_params[start..start + d].iter_mut().zip(&s.grad_input[off..]) {
                *g += v;
            }
        }
        if let Some(gx) = grad_x {
            gx.copy_from_slice(&s.grad_input[..self.spec.input_dim]);
        }
        loss
    }
}
