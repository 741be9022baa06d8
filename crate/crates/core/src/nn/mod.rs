//! Neural-network substrate: layers with hand-written backward passes,
//! the AdamW optimizer and a finite-difference gradient checker.
//!
//! Every layer follows the same convention: `forward` returns the output
//! together with whatever it needs to differentiate later, and `backward`
//! consumes that cache, *accumulates* parameter gradients into
//! [`Parameter::grad`] and returns the gradient with respect to its input.

pub mod activation;
pub mod adamw;
pub mod dense;
pub mod dropout;
pub mod gradcheck;
pub mod layer_norm;
pub mod loss;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

pub use activation::{gelu, relu, sigmoid, softmax_rows};
pub use adamw::{AdamW, AdamWConfig};
pub use dense::{dense_backward, dense_forward, Dense, DenseGrads};
pub use dropout::{dropout, Dropout};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use layer_norm::{layer_norm, LayerNorm};
pub use loss::cross_entropy;

/// Whether stochastic layers (dropout) are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// A named trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    /// Normal(0, std) initialisation drawn from `rng`.
    pub fn normal(name: impl Into<String>, shape: &[usize], std: f64, rng: &mut RngState) -> Self {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("std is positive");
        let data = (0..n).map(|_| T::c(dist.sample(&mut rng.inner))).collect();
        Self::new(name, Tensor::from_vec(shape, data).expect("sized from shape"))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }
}

/// Visits every trainable parameter of a model in a fixed order.
///
/// The order is part of the contract: optimizers and checkpoints rely on it
/// being stable for a given configuration.
pub trait Parameters<T: Scalar> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }
}

/// Seeded generator for initialisation and dropout masks.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        use rand::Rng;
        self.inner.random::<f64>()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}
