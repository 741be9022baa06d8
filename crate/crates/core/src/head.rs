//! Classification head: `dropout → dense(→512) → ReLU → dense(→2)`, with
//! per-logit sigmoid probabilities and an argmax verdict.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, NnError, ShapeError};
use crate::nn::activation::{relu, relu_backward, sigmoid_scalar};
use crate::nn::dropout::dropout_backward;
use crate::nn::{cross_entropy, dropout, Dense, Mode, Parameter, Parameters, RngState};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub input_dim: usize,
    pub dropout_p: f64,
    pub dense_dim: usize,
    pub num_classes: usize,
}

impl HeadConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            dropout_p: 0.3,
            dense_dim: 512,
            num_classes: 2,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ModelError::Config(format!("head dropout {} outside [0, 1)", self.dropout_p)));
        }
        if self.dense_dim == 0 || self.input_dim == 0 {
            return Err(ModelError::Config("head dimensions must be positive".into()));
        }
        if self.num_classes != 2 {
            return Err(ModelError::Config(format!(
                "the head is binary, got num_classes = {}",
                self.num_classes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Vulnerable,
    NonVulnerable,
}

impl Verdict {
    /// Argmax over `[non_vulnerable, vulnerable]`; a tie is not a finding.
    pub fn from_logits(logits: [f64; 2]) -> Self {
        if logits[1] > logits[0] {
            Verdict::Vulnerable
        } else {
            Verdict::NonVulnerable
        }
    }

    pub fn class_index(self) -> usize {
        match self {
            Verdict::NonVulnerable => 0,
            Verdict::Vulnerable => 1,
        }
    }

    pub fn label(self) -> u8 {
        self.class_index() as u8
    }

    pub fn from_label(label: u8) -> Self {
        if label == 1 {
            Verdict::Vulnerable
        } else {
            Verdict::NonVulnerable
        }
    }
}

/// Output for one function.
///
/// `probabilities` are independent sigmoids of the two logits and need not
/// sum to one; the verdict is decided on the logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnPrediction {
    pub id: String,
    pub logits: [f64; 2],
    pub probabilities: [f64; 2],
    pub verdict: Verdict,
}

impl VulnPrediction {
    pub fn from_logits(id: impl Into<String>, logits: [f64; 2]) -> Self {
        Self {
            id: id.into(),
            logits,
            probabilities: [sigmoid_scalar(logits[0]), sigmoid_scalar(logits[1])],
            verdict: Verdict::from_logits(logits),
        }
    }

    /// Sigmoid of the winning logit.
    pub fn confidence(&self) -> f64 {
        self.probabilities[self.verdict.class_index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub config: HeadConfig,
    pub dense: Dense<T>,
    pub classifier: Dense<T>,
}

#[derive(Debug, Clone)]
pub struct HeadCache<T> {
    dropped: Tensor<T>,
    mask: Option<Tensor<T>>,
    pre: Tensor<T>,
    hidden: Tensor<T>,
}

impl<T: Scalar> Head<T> {
    pub fn init(config: HeadConfig, rng: &mut RngState) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self {
            config,
            dense: Dense::init("head.dense", config.input_dim, config.dense_dim, 0.02, rng),
            classifier: Dense::init("head.classifier", config.dense_dim, config.num_classes, 0.02, rng),
        })
    }

    /// Returns the two logits.
    pub fn forward(
        &self,
        feature: &Tensor<T>,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<([T; 2], HeadCache<T>), ModelError> {
        if feature.len() != self.config.input_dim {
            return Err(ShapeError::new(format!(
                "head expects a {}-dim feature, got {}",
                self.config.input_dim,
                feature.len()
            ))
            .into());
        }
        let x = feature.clone().reshape(&[1, feature.len()])?;
        let (dropped, mask) = dropout(&x, self.config.dropout_p, mode, rng)?;
        let pre = self.dense.forward(&dropped)?;
        let hidden = relu(&pre);
        let logits = self.classifier.forward(&hidden)?;
        let l = [logits.data()[0], logits.data()[1]];
        Ok((
            l,
            HeadCache {
                dropped,
                mask,
                pre,
                hidden,
            },
        ))
    }

    /// Accumulates head gradients and returns `∂L/∂feature`.
    pub fn backward(&mut self, cache: &HeadCache<T>, d_logits: [T; 2]) -> Result<Tensor<T>, ShapeError> {
        let dl = Tensor::from_vec(&[1, 2], d_logits.to_vec())?;
        let d_hidden = self.classifier.backward(&cache.hidden, &dl)?;
        let d_pre = relu_backward(&cache.pre, &d_hidden);
        let d_dropped = self.dense.backward(&cache.dropped, &d_pre)?;
        let dx = dropout_backward(cache.mask.as_ref(), &d_dropped);
        let n = dx.len();
        dx.reshape(&[n])
    }

    pub fn predict(
        &self,
        id: &str,
        feature: &Tensor<T>,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<VulnPrediction, ModelError> {
        let (l, _) = self.forward(feature, mode, rng)?;
        Ok(VulnPrediction::from_logits(id, [l[0].as_f64(), l[1].as_f64()]))
    }
}

impl<T: Scalar> Parameters<T> for Head<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.dense.visit_params(f);
        self.classifier.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.dense.visit_params_mut(f);
        self.classifier.visit_params_mut(f);
    }
}

/// Cross-entropy of one sample's logits, with the logit gradient.
pub fn training_loss<T: Scalar>(logits: [T; 2], label: u8) -> Result<(T, [T; 2]), NnError> {
    let t = Tensor::from_vec(&[1, 2], logits.to_vec())?;
    let (loss, g) = cross_entropy(&t, &[label])?;
    Ok((loss, [g.data()[0], g.data()[1]]))
}
