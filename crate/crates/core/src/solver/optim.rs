//! Plain SGD and Adam.
//!
//! Adam follows the three-line recursion
//! `m ← β₁ m + (1 − β₁) g`, `v ← β₂ v + (1 − β₂) |g|²`,
//! `θ ← θ − γ m / (ε + √v)` with no bias correction unless
//! [`AdamConfig::bias_correction`] is set.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;
#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bias_correction: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8, bias_correction: false }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::config("adam decay rates must lie in (0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("adam epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    Adam(AdamConfig),
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam(AdamConfig::default())
    }
}

impl Optimizer {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::default()),
            other => Err(Error::config(format!("unknown optimizer {:?}", other))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Optimizer::Sgd => Ok(()),
            Optimizer::Adam(c) => c.validate(),
        }
    }
}

/// `(|x_1|^r, …, |x_n|^r)`.
pub fn pow_abs(x: &[f64], r: f64) -> Vec<f64> {
    x.iter().map(|v| v.abs().powf(r)).collect()
}

/// Parameters, optimizer memory and the position in the step sequence.
///
/// The random state is `(seed, step)`: the batch for step `m` is drawn from
/// a stream derived from both, so a saved state resumes the same sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub theta: ParamVector,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(theta: ParamVector, seed: u64) -> Self {
        let n = theta.len();
        TrainState { theta, first_moment: vec![0.0; n], second_moment: vec![0.0; n], step: 0, seed }
    }

    fn check(&self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.theta.len() {
            return Err(Error::dim(format!("gradient has {} entries, parameters {}", grad.len(), self.theta.len())));
        }
        Ok(())
    }

    pub fn apply(&mut self, optimizer: &Optimizer, grad: &[f64], lr: f64) -> Result<()> {
        match optimizer {
            Optimizer::Sgd => sgd_step(self, grad, lr),
            Optimizer::Adam(c) => adam_step(self, grad, lr, c),
        }
    }
}

/// `θ ← θ − γ g`; the moments are left alone.
pub fn sgd_step(state: &mut TrainState, grad: &[f64], lr: f64) -> Result<()> {
    state.check(grad)?;
    for (t, g) in state.theta.values_mut().iter_mut().zip(grad) {
        *t -= lr * g;
    }
    state.step += 1;
    Ok(())
}

pub fn adam_step(state: &mut TrainState, grad: &[f64], lr: f64, config: &AdamConfig) -> Result<()> {
    state.check(grad)?;
    let AdamConfig { beta1, beta2, epsilon, bias_correction } = *config;
    let k = (state.step + 1) as i32;
    let (c1, c2) = if bias_correction { (1.0 - beta1.powi(k), 1.0 - beta2.powi(k)) } else { (1.0, 1.0) };
    let theta = state.theta.values_mut();
    for i in 0..theta.len() {
        let g = grad[i];
        let m = beta1 * state.first_moment[i] + (1.0 - beta1) * g;
        let v = beta2 * state.second_moment[i] + (1.0 - beta2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        theta[i] -= lr * (m / c1) / (epsilon + (v / c2).sqrt());
    }
    state.step += 1;
    Ok(())
}
