use serde::{Deserialize, Serialize};

use super::network::{ModelParams, ParamGrads};
use super::ops::Scalar;
use crate::error::{contract, param, Result};

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptCfg {
    /// Base learning rate. `None` means `0.03 · batch / 256`.
    pub lr: Option<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Cosine-decay the learning rate to zero over the run.
    pub cosine_decay: bool,
}

impl Default for OptCfg {
    fn default() -> Self {
        OptCfg { lr: None, momentum: 0.9, weight_decay: 5e-4, cosine_decay: true }
    }
}

impl OptCfg {
    pub fn base_lr(&self, batch_size: usize) -> f64 {
        self.lr.unwrap_or(0.03 * batch_size as f64 / 256.0)
    }

    /// Learning rate at `step` of `total` steps.
    pub fn lr_at(&self, batch_size: usize, step: u64, total: u64) -> f64 {
        let base = self.base_lr(batch_size);
        if !self.cosine_decay || total == 0 {
            return base;
        }
        let t = (step as f64 / total as f64).min(1.0);
        0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr.is_some_and(|lr| !(lr > 0.0)) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(param(format!("optimizer settings out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Momentum buffers aligned with the trainable tensors, plus a step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState<T> {
    pub velocity: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> OptState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        OptState { velocity: params.trainable().iter().map(|t| vec![T::ZERO; t.len()]).collect(), step: 0 }
    }
}

/// One update: `v ← μ·v + g + λ·θ`, `θ ← θ − lr·v`.
pub fn sgd_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ParamGrads<T>,
    lr: f64,
    cfg: &OptCfg,
    state: &mut OptState<T>,
) -> Result<()> {
    let tensors = params.trainable_mut();
    if grads.tensors.len() != tensors.len() || state.velocity.len() != tensors.len() {
        return Err(contract("gradient or optimizer state does not match the parameter layout"));
    }
    let (mu, wd, lr) = (T::from_f64(cfg.momentum), T::from_f64(cfg.weight_decay), T::from_f64(lr));
    for ((theta, g), v) in tensors.into_iter().zip(&grads.tensors).zip(&mut state.velocity) {
        if theta.len() != g.len() || theta.len() != v.len() {
            return Err(contract("tensor shape mismatch in optimizer step"));
        }
        for ((t, &gi), vi) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = mu * *vi + gi + wd * *t;
            *t = *t - lr * *vi;
        }
    }
    state.step += 1;
    Ok(())
}
