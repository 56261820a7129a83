//! Shared minibatch training driver.

use super::ema::EmaState;
use super::net::Net;
use super::optim::{OptimizerKind, OptimizerState};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// When set, the returned weights are the EMA shadow.
    pub ema_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            batch_size: 4096,
            optimizer: OptimizerKind::AdamW,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            ema_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::config("ema_decay must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Mean minibatch loss at every step.
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean loss over the last `n` steps.
    pub fn tail_loss(&self, n: usize) -> f64 {
        let k = n.min(self.losses.len()).max(1);
        self.losses[self.losses.len().saturating_sub(k)..].iter().sum::<f64>() / k as f64
    }
}

/// Run `cfg.steps` optimizer steps. `batch(net, step)` returns the mean loss
/// and mean gradient of one minibatch at the current weights.
pub fn fit<F>(net: &mut Net, cfg: &TrainConfig, mut batch: F) -> Result<TrainReport>
where
    F: FnMut(&Net, usize) -> (f64, Vec<f64>),
{
    cfg.validate()?;
    let mut opt = OptimizerState::new(cfg.optimizer, net.params.len(), cfg.learning_rate, cfg.weight_decay);
    let mut ema = cfg.ema_decay.map(|d| EmaState::new(d, &net.params));
    let mut report = TrainReport {
        losses: Vec::with_capacity(cfg.steps),
    };
    for step in 0..cfg.steps {
        let (loss, grad) = batch(net, step);
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                detail: format!("non-finite loss {loss}"),
            });
        }
        opt.step(&mut net.params, &grad)?;
        if let Some(e) = ema.as_mut() {
            e.update(&net.params)?;
        }
        report.losses.push(loss);
    }
    if let Some(e) = ema {
        net.params = e.shadow;
    }
    Ok(report)
}
