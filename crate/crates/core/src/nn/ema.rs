use super::params::ParamVector;
use crate::Result;

/// Exponential moving average of model weights.
#[derive(Debug, Clone)]
pub struct EmaState {
    pub decay: f64,
    pub shadow: ParamVector,
}

impl EmaState {
    pub fn new(decay: f64, params: &ParamVector) -> Self {
        Self {
            decay,
            shadow: params.clone(),
        }
    }

    /// `shadow <- decay * shadow + (1 - decay) * params`
    pub fn update(&mut self, params: &ParamVector) -> Result<()> {
        self.shadow.check_compatible(params)?;
        let d = self.decay;
        for (s, &p) in self.shadow.values_mut().iter_mut().zip(params.values()) {
            *s = d * *s + (1.0 - d) * p;
        }
        Ok(())
    }
}

pub fn ema_update(mut ema: EmaState, params: &ParamVector) -> Result<EmaState> {
    ema.update(params)?;
    Ok(ema)
}
