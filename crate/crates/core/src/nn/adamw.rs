//! AdamW: Adam with weight decay applied directly to the parameters rather
//! than folded into the gradient.
//!
//! ```text
//! t ← t + 1
//! m ← β₁·m + (1 − β₁)·g
//! v ← β₂·v + (1 − β₂)·g²
//! m̂ = m / (1 − β₁ᵗ),  v̂ = v / (1 − β₂ᵗ)
//! θ ← θ − lr·(m̂ / (√v̂ + ε) + wd·θ)
//! ```

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Parameter, Parameters};
use crate::error::NnError;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<T> {
    m: Tensor<T>,
    v: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    moments: HashMap<String, Moments<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: HashMap::new(),
        }
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter of `model`.
    ///
    /// If any gradient is non-finite nothing is modified and the offending
    /// parameter is named in the error.
    pub fn step(&mut self, model: &mut dyn Parameters<T>) -> Result<(), NnError> {
        let mut bad = None;
        model.visit_params(&mut |p| {
            if bad.is_none() && !p.grad.all_finite() {
                bad = Some(p.name.clone());
            }
        });
        if let Some(name) = bad {
            return Err(NnError::NonFiniteGradient {
                name,
                step: self.step + 1,
            });
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::c(1.0 - c.beta1.powi(t));
        let bc2 = T::c(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let (lr, wd, eps) = (T::c(c.lr), T::c(c.weight_decay), T::c(c.epsilon));
        let moments = &mut self.moments;
        model.visit_params_mut(&mut |p: &mut Parameter<T>| {
            let state = moments.entry(p.name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(p.shape()),
                v: Tensor::zeros(p.shape()),
            });
            let values = p.value.data_mut();
            let grads = p.grad.data();
            let ms = state.m.data_mut();
            let vs = state.v.data_mut();
            for i in 0..values.len() {
                let g = grads[i];
                ms[i] = b1 * ms[i] + (T::one() - b1) * g;
                vs[i] = b2 * vs[i] + (T::one() - b2) * g * g;
                let m_hat = ms[i] / bc1;
                let v_hat = vs[i] / bc2;
                values[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * values[i]);
            }
        });
        Ok(())
    }
}
