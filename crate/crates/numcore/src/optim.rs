use serde::{Deserialize, Serialize};

use crate::error::{NumError, Result};
use crate::params::ParamStore;

/// Plain SGD with a step-wise multiplicative learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub decay_factor: f64,
    /// Number of optimizer steps between decays.
    pub decay_every: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 3e-4,
            decay_factor: 0.5,
            decay_every: 50,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(NumError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(NumError::InvalidConfig(format!(
                "decay_factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_every == 0 {
            return Err(NumError::InvalidConfig("decay_every must be positive".into()));
        }
        Ok(())
    }

    /// `learning_rate * decay_factor^floor(step / decay_every)`.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let periods = (step / self.decay_every) as i32;
        self.learning_rate * self.decay_factor.powi(periods)
    }
}

/// Applies `p <- p - lr(step) * g` to every trainable parameter and clears
/// all gradients. Nothing is modified if any gradient is non-finite.
pub fn sgd_step(store: &mut ParamStore, config: &SgdConfig, step: usize) -> Result<()> {
    for (name, t) in store.iter() {
        if let Some(g) = t.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NumError::NonFiniteGradient(name.to_string()));
            }
        }
    }
    let lr = config.learning_rate_at(step);
    for (_, t) in store.iter_mut() {
        if !t.requires_grad() {
            continue;
        }
        let Some(g) = t.grad().map(<[f64]>::to_vec) else { continue };
        t.data_mut().iter_mut().zip(&g).for_each(|(p, g)| *p -= lr * g);
    }
    store.zero_grads();
    Ok(())
}

/// Stateful wrapper that tracks the optimizer step count.
#[derive(Debug, Clone)]
pub struct Sgd {
    config: SgdConfig,
    steps: usize,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Sgd { config, steps: 0 })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    /// Learning rate the next call to [`Sgd::step`] will use.
    pub fn current_learning_rate(&self) -> f64 {
        self.config.learning_rate_at(self.steps)
    }

    /// Performs one update and returns the learning rate that was applied.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<f64> {
        let lr = self.current_learning_rate();
        sgd_step(store, &self.config, self.steps)?;
        self.steps += 1;
        Ok(lr)
    }
}
