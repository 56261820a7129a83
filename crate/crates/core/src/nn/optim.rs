use std::fmt;
use std::str::FromStr;

use super::params::ParamVector;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    AdamW,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::AdamW),
            other => Err(Error::config(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// Adam / AdamW with bias correction.
///
/// Adam folds `weight_decay * param` into the gradient; AdamW applies it
/// directly to the parameters as `param *= 1 - lr * weight_decay`.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, n_params: usize, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            kind,
            step_count: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }

    pub fn adamw(n_params: usize, learning_rate: f64, weight_decay: f64) -> Self {
        Self::new(OptimizerKind::AdamW, n_params, learning_rate, weight_decay)
    }

    pub fn step(&mut self, params: &mut ParamVector, grads: &[f64]) -> Result<()> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(Error::config(format!(
                "gradient length {} does not match {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training {
                step: self.step_count as usize,
                detail: format!("non-finite gradient at parameter {i}"),
            });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.epsilon, self.weight_decay);
        let decoupled = self.kind == OptimizerKind::AdamW;
        for (((p, &g), m), v) in params
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let g = if decoupled { g } else { g + wd * *p };
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            if decoupled {
                *p *= 1.0 - lr * wd;
            }
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

pub fn optimizer_step(
    mut state: OptimizerState,
    mut params: ParamVector,
    grads: &ParamVector,
) -> Result<(ParamVector, OptimizerState)> {
    params.check_compatible(grads)?;
    state.step(&mut params, grads.values())?;
    Ok((params, state))
}
