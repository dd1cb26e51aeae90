use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::heads::{HeadGradients, LinearHeads};
use crate::error::{Error, Result};

/// SGD with momentum, weight decay and a step learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: u64,
    pub total_iters: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            weight_decay: 2e-3,
            momentum: 0.9,
            lr_decay_factor: 5.0,
            lr_decay_every: 20_000,
            total_iters: 75_000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("lr_decay_factor", self.lr_decay_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("lr_decay_every must be positive".into()));
        }
        Ok(())
    }

    /// `lr₀ / factor^⌊iter / every⌋`.
    pub fn learning_rate_at(&self, iter: u64) -> f64 {
        let k = iter / self.lr_decay_every;
        self.learning_rate / libm::pow(self.lr_decay_factor, k as f64)
    }
}

/// Momentum buffers, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<f64>,
}

impl SgdState {
    pub fn new(heads: &LinearHeads) -> Self {
        Self { velocity: vec![0.0; heads.num_params()] }
    }
}

/// `v ← μ·v + g + λ·w`, `w ← w − lr(iter)·v`. Decay applies to weights only,
/// not biases. A non-finite gradient aborts the step with the heads untouched.
pub fn sgd_step(
    heads: &mut LinearHeads,
    grads: &HeadGradients,
    state: &mut SgdState,
    cfg: &OptimizerConfig,
    iter: u64,
) -> Result<()> {
    let n = heads.num_params();
    if grads.values.len() != n || state.velocity.len() != n {
        return Err(crate::error::dim_err!(
            "{n} parameters, {} gradients, {} momentum buffers",
            grads.values.len(),
            state.velocity.len()
        ));
    }
    if let Some(i) = grads.values.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("gradient {i} is {}", grads.values[i])));
    }
    let lr = cfg.learning_rate_at(iter);
    let mut params = heads.flat_params();
    let mask = heads.weight_mask();
    for (((w, v), g), is_weight) in params.iter_mut().zip(&mut state.velocity).zip(&grads.values).zip(mask) {
        let decay = if is_weight { cfg.weight_decay * *w } else { 0.0 };
        *v = cfg.momentum * *v + g + decay;
        *w -= lr * *v;
    }
    if params.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    heads.set_flat_params(&params)
}
