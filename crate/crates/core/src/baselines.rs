//! Stacked-LSTM sequence classifier used as a from-scratch baseline.
//!
//! `embed → LSTM(64) → LSTM(32) → last hidden → dense + ReLU → 2 logits`.
//! It implements [`Classifier`], so it trains and evaluates through the
//! same harness as the transformer.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, ShapeError};
use crate::head::VulnPrediction;
use crate::model::Classifier;
use crate::nn::activation::{relu, relu_backward, sigmoid_scalar};
use crate::nn::{Dense, Mode, Parameter, Parameters, RngState};
use crate::tensor::{Scalar, Tensor};
use crate::tokenizer::{FallbackTokenizer, TokenizedSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub max_vocab_size: usize,
    pub max_sequence_length: usize,
    pub embedding_dim: usize,
    /// Hidden width of each stacked layer, bottom first.
    pub units: Vec<usize>,
    /// Width of the ReLU dense layer before the logits.
    pub dense_dim: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            max_vocab_size: 10_000,
            max_sequence_length: 500,
            embedding_dim: 100,
            units: vec![64, 32],
            dense_dim: 32,
        }
    }
}

impl LstmConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.units.is_empty() || self.units.contains(&0) {
            return Err(ModelError::Config("LSTM unit sizes must be positive".into()));
        }
        if self.max_vocab_size == 0 || self.embedding_dim == 0 || self.dense_dim == 0 {
            return Err(ModelError::Config("LSTM dimensions must be positive".into()));
        }
        if self.max_sequence_length == 0 {
            return Err(ModelError::Config("max_sequence_length must be at least 1".into()));
        }
        Ok(())
    }

    /// The hash-vocabulary tokenizer the baseline reads.
    pub fn tokenizer(&self) -> FallbackTokenizer {
        FallbackTokenizer::c_default(self.max_vocab_size).expect("vocabulary fits the C dictionary")
    }
}

/// One LSTM layer. Gate blocks in the fused weights are ordered
/// input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell<T> {
    /// `[in, 4h]`
    pub input_weight: Parameter<T>,
    /// `[h, 4h]`
    pub recurrent_weight: Parameter<T>,
    /// `[4h]`
    pub bias: Parameter<T>,
}

/// Gate activations of one step, each of width `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache<T> {
    pub input: Vec<T>,
    pub forget: Vec<T>,
    pub cell: Vec<T>,
    pub output: Vec<T>,
    pub c_prev: Vec<T>,
    pub tanh_c: Vec<T>,
}

impl<T: Scalar> LstmCell<T> {
    /// Weights ~ Normal(0, 1/√fan_in); forget-gate bias 1.
    pub fn init(prefix: &str, input: usize, hidden: usize, rng: &mut RngState) -> Self {
        let mut bias = Parameter::zeros(format!("{prefix}.bias"), &[4 * hidden]);
        for v in &mut bias.value.data_mut()[hidden..2 * hidden] {
            *v = T::one();
        }
        Self {
            input_weight: Parameter::normal(
                format!("{prefix}.input_weight"),
                &[input, 4 * hidden],
                1.0 / (input as f64).sqrt(),
                rng,
            ),
            recurrent_weight: Parameter::normal(
                format!("{prefix}.recurrent_weight"),
                &[hidden, 4 * hidden],
                1.0 / (hidden as f64).sqrt(),
                rng,
            ),
            bias,
        }
    }

    pub fn zeros(prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            input_weight: Parameter::zeros(format!("{prefix}.input_weight"), &[input, 4 * hidden]),
            recurrent_weight: Parameter::zeros(format!("{prefix}.recurrent_weight"), &[hidden, 4 * hidden]),
            bias: Parameter::zeros(format!("{prefix}.bias"), &[4 * hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_weight.value.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.bias.value.len() / 4
    }

    /// Applies the gate nonlinearities to pre-activations `a` (width 4h,
    /// already including `x·Wx + h·Wh + b`).
    fn gates(&self, a: &[T], c_prev: &[T]) -> (Vec<T>, Vec<T>, StepCache<T>) {
        let h = self.hidden_dim();
        let input: Vec<T> = a[..h].iter().map(|&v| sigmoid_scalar(v)).collect();
        let forget: Vec<T> = a[h..2 * h].iter().map(|&v| sigmoid_scalar(v)).collect();
        let cell: Vec<T> = a[2 * h..3 * h].iter().map(|&v| v.tanh()).collect();
        let output: Vec<T> = a[3 * h..].iter().map(|&v| sigmoid_scalar(v)).collect();
        let c: Vec<T> = (0..h).map(|j| forget[j] * c_prev[j] + input[j] * cell[j]).collect();
        let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
        let h_t: Vec<T> = (0..h).map(|j| output[j] * tanh_c[j]).collect();
        let cache = StepCache {
            input,
            forget,
            cell,
            output,
            c_prev: c_prev.to_vec(),
            tanh_c,
        };
        (h_t, c, cache)
    }

    fn recurrent_term(&self, h_prev: &[T], a: &mut [T]) {
        let w = &self.recurrent_weight.value;
        for (k, &hk) in h_prev.iter().enumerate() {
            if hk != T::zero() {
                for (o, &wv) in a.iter_mut().zip(w.row(k)) {
                    *o += hk * wv;
                }
            }
        }
    }

    /// One time step: returns `(h_t, c_t)` and the step cache.
    pub fn step(&self, x: &[T], h_prev: &[T], c_prev: &[T]) -> Result<(Vec<T>, Vec<T>, StepCache<T>), ShapeError> {
        let h = self.hidden_dim();
        if x.len() != self.input_dim() || h_prev.len() != h || c_prev.len() != h {
            return Err(ShapeError::new(format!(
                "LSTM step with x {}, h {}, c {} for a cell of {} → {}",
                x.len(),
                h_prev.len(),
                c_prev.len(),
                self.input_dim(),
                h
            )));
        }
        let mut a = self.bias.value.data().to_vec();
        for (k, &xk) in x.iter().enumerate() {
            for (o, &wv) in a.iter_mut().zip(self.input_weight.value.row(k)) {
                *o += xk * wv;
            }
        }
        self.recurrent_term(h_prev, &mut a);
        Ok(self.gates(&a, c_prev))
    }

    /// Runs the whole sequence `xs: [t, in]` from a zero state.
    pub fn forward_sequence(&self, xs: &Tensor<T>) -> Result<(Tensor<T>, SequenceCache<T>), ShapeError> {
        let steps = xs.rows();
        let h = self.hidden_dim();
        let mut pre = xs.matmul(&self.input_weight.value)?;
        pre.add_row_broadcast(&self.bias.value);
        let mut hs = Tensor::zeros(&[steps, h]);
        let mut caches = Vec::with_capacity(steps);
        let mut h_prev = vec![T::zero(); h];
        let mut c_prev = vec![T::zero(); h];
        for t in 0..steps {
            let mut a = pre.row(t).to_vec();
            self.recurrent_term(&h_prev, &mut a);
            let (h_t, c_t, cache) = self.gates(&a, &c_prev);
            hs.row_mut(t).copy_from_slice(&h_t);
            caches.push(cache);
            h_prev = h_t;
            c_prev = c_t;
        }
        Ok((
            hs.clone(),
            SequenceCache {
                xs: xs.clone(),
                hs,
                steps: caches,
            },
        ))
    }

    /// Backpropagation through time. `d_hs` holds the gradient arriving at
    /// each step's hidden output from above; returns `∂L/∂xs`.
    pub fn backward_sequence(&mut self, cache: &SequenceCache<T>, d_hs: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
        let steps = cache.steps.len();
        let h = self.hidden_dim();
        let mut d_pre = Tensor::zeros(&[steps, 4 * h]);
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        let one = T::one();
        for t in (0..steps).rev() {
            let s = &cache.steps[t];
            let da = d_pre.row_mut(t);
            for j in 0..h {
                let dh = d_hs.row(t)[j] + dh_next[j];
                let d_out = dh * s.tanh_c[j];
                let dc = dh * s.output[j] * (one - s.tanh_c[j] * s.tanh_c[j]) + dc_next[j];
                let d_in = dc * s.cell[j];
                let d_cell = dc * s.input[j];
                let d_forget = dc * s.c_prev[j];
                dc_next[j] = dc * s.forget[j];
                da[j] = d_in * s.input[j] * (one - s.input[j]);
                da[h + j] = d_forget * s.forget[j] * (one - s.forget[j]);
                da[2 * h + j] = d_cell * (one - s.cell[j] * s.cell[j]);
                da[3 * h + j] = d_out * s.output[j] * (one - s.output[j]);
            }
            let w = &self.recurrent_weight.value;
            for (k, d) in dh_next.iter_mut().enumerate() {
                *d = crate::tensor::dot(da, w.row(k));
            }
        }
        // h_{t-1} for every step, with zeros for t = 0
        let mut h_prev = Tensor::zeros(&[steps, h]);
        for t in 1..steps {
            h_prev.row_mut(t).copy_from_slice(cache.hs.row(t - 1));
        }
        self.input_weight.grad.add_assign(&cache.xs.t_matmul(&d_pre)?);
        self.recurrent_weight.grad.add_assign(&h_prev.t_matmul(&d_pre)?);
        self.bias.grad.add_assign(&d_pre.sum_rows());
        d_pre.matmul_t(&self.input_weight.value)
    }
}

#[derive(Debug, Clone)]
pub struct SequenceCache<T> {
    xs: Tensor<T>,
    hs: Tensor<T>,
    pub steps: Vec<StepCache<T>>,
}

impl<T: Scalar> Parameters<T> for LstmCell<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        f(&self.input_weight);
        f(&self.recurrent_weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.input_weight);
        f(&mut self.recurrent_weight);
        f(&mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmClassifier<T> {
    pub config: LstmConfig,
    pub embedding: Parameter<T>,
    pub layers: Vec<LstmCell<T>>,
    pub dense: Dense<T>,
    pub classifier: Dense<T>,
}

#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    ids: Vec<u32>,
    layers: Vec<SequenceCache<T>>,
    last: Tensor<T>,
    pre: Tensor<T>,
    hidden: Tensor<T>,
}

impl<T: Scalar> LstmClassifier<T> {
    pub fn init(config: LstmConfig, rng: &mut RngState) -> Result<Self, ModelError> {
        config.validate()?;
        let embedding = Parameter::normal("lstm.embedding", &[config.max_vocab_size, config.embedding_dim], 0.1, rng);
        let mut layers = Vec::with_capacity(config.units.len());
        let mut width = config.embedding_dim;
        for (i, &u) in config.units.iter().enumerate() {
            layers.push(LstmCell::init(&format!("lstm.layers.{i}"), width, u, rng));
            width = u;
        }
        let std = 1.0 / (width as f64).sqrt();
        let dense = Dense::init("lstm.dense", width, config.dense_dim, std, rng);
        let classifier = Dense::init(
            "lstm.classifier",
            config.dense_dim,
            2,
            1.0 / (config.dense_dim as f64).sqrt(),
            rng,
        );
        Ok(Self {
            config,
            embedding,
            layers,
            dense,
            classifier,
        })
    }

    /// Logits for an id sequence; an empty sequence classifies the zero
    /// state.
    pub fn logits(&self, ids: &[u32]) -> Result<([T; 2], LstmCache<T>), ModelError> {
        if ids.len() > self.config.max_sequence_length {
            return Err(ModelError::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_sequence_length,
            });
        }
        let e = self.config.embedding_dim;
        let mut xs = Tensor::zeros(&[ids.len(), e]);
        for (t, &id) in ids.iter().enumerate() {
            if id as usize >= self.config.max_vocab_size {
                return Err(ModelError::TokenOutOfRange {
                    id,
                    position: t,
                    vocab_size: self.config.max_vocab_size,
                });
            }
            xs.row_mut(t).copy_from_slice(self.embedding.value.row(id as usize));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut seq = xs;
        for layer in &self.layers {
            let (hs, cache) = layer.forward_sequence(&seq)?;
            caches.push(cache);
            seq = hs;
        }
        let width = self.layers.last().map_or(0, |l| l.hidden_dim());
        let last = if seq.rows() == 0 {
            Tensor::zeros(&[1, width])
        } else {
            Tensor::from_vec(&[1, width], seq.row(seq.rows() - 1).to_vec())?
        };
        let pre = self.dense.forward(&last)?;
        let hidden = relu(&pre);
        let out = self.classifier.forward(&hidden)?;
        let l = [out.data()[0], out.data()[1]];
        Ok((
            l,
            LstmCache {
                ids: ids.to_vec(),
                layers: caches,
                last,
                pre,
                hidden,
            },
        ))
    }

    pub fn classify(&self, id: &str, ids: &[u32]) -> Result<VulnPrediction, ModelError> {
        let (l, _) = self.logits(ids)?;
        Ok(VulnPrediction::from_logits(id, [l[0].as_f64(), l[1].as_f64()]))
    }

    pub fn backward_logits(&mut self, cache: &LstmCache<T>, d_logits: [T; 2]) -> Result<(), ModelError> {
        let dl = Tensor::from_vec(&[1, 2], d_logits.to_vec())?;
        let d_hidden = self.classifier.backward(&cache.hidden, &dl)?;
        let d_pre = relu_backward(&cache.pre, &d_hidden);
        let d_last = self.dense.backward(&cache.last, &d_pre)?;
        let steps = cache.ids.len();
        if steps == 0 {
            return Ok(());
        }
        let width = d_last.len();
        let mut d_seq = Tensor::zeros(&[steps, width]);
        d_seq.row_mut(steps - 1).copy_from_slice(d_last.data());
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            d_seq = layer.backward_sequence(lc, &d_seq)?;
        }
        for (t, &id) in cache.ids.iter().enumerate() {
            for (g, &d) in self.embedding.grad.row_mut(id as usize).iter_mut().zip(d_seq.row(t)) {
                *g += d;
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Classifier<T> for LstmClassifier<T> {
    type Cache = LstmCache<T>;

    /// Reads the unpadded ids, bos and eos included. No dropout, so the
    /// mode and generator are unused.
    fn forward(
        &self,
        sample: &TokenizedSample,
        _mode: Mode,
        _rng: &mut RngState,
    ) -> Result<([T; 2], LstmCache<T>), ModelError> {
        self.logits(sample.active_ids())
    }

    fn backward(&mut self, cache: &LstmCache<T>, d_logits: [T; 2]) -> Result<(), ModelError> {
        self.backward_logits(cache, d_logits)
    }
}

impl<T: Scalar> Parameters<T> for LstmClassifier<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        f(&self.embedding);
        for l in &self.layers {
            l.visit_params(f);
        }
        self.dense.visit_params(f);
        self.classifier.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.embedding);
        for l in &mut self.layers {
            l.visit_params_mut(f);
        }
        self.dense.visit_params_mut(f);
        self.classifier.visit_params_mut(f);
    }
}
