//! Transformer encoder that keeps every layer's hidden states.
//!
//! `states[0]` is the embedding output and `states[i]` the output of layer
//! `i`, so a classifier can read any mix of layers through [`pool`].

mod attention;
mod embedding;
mod layer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use attention::{AttentionCache, SelfAttention, MASK_BIAS};
pub use embedding::{EmbeddingCache, Embeddings};
pub use layer::{EncoderLayer, FeedForward, FeedForwardCache, LayerCache};

use crate::error::{ModelError, ShapeError};
use crate::nn::{Mode, Parameter, Parameters, RngState};
use crate::tensor::{Scalar, Tensor};
use crate::tokenizer::TokenizedSample;

/// Vocabulary size of the RoBERTa/CodeBERT BPE files.
pub const CODEBERT_VOCAB_SIZE: usize = 50_265;
/// Vocabulary size of the `tiny` preset, sized for the fallback tokenizer.
pub const TINY_VOCAB_SIZE: usize = 1_024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub dropout_p: f64,
}

impl EncoderConfig {
    /// 12 layers, hidden 768, 12 heads, FFN 3072, 512 positions.
    pub fn codebert_base() -> Self {
        Self {
            vocab_size: CODEBERT_VOCAB_SIZE,
            hidden_dim: 768,
            num_layers: 12,
            num_heads: 12,
            ffn_dim: 3072,
            max_positions: 512,
            dropout_p: 0.1,
        }
    }

    /// Desk-scale preset: 2 layers, hidden 64, 4 heads, FFN 128, 64 positions.
    pub fn tiny() -> Self {
        Self {
            vocab_size: TINY_VOCAB_SIZE,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 128,
            max_positions: 64,
            dropout_p: 0.1,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "codebert-base" => Some(Self::codebert_base()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.vocab_size == 0 || self.hidden_dim == 0 || self.num_heads == 0 || self.ffn_dim == 0 {
            return fail("encoder dimensions must be positive".into());
        }
        if self.max_positions < 2 {
            return fail(format!("max_positions {} < 2", self.max_positions));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return fail(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }
}

/// Hidden states after the embeddings and after every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations<T> {
    pub states: Vec<Tensor<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    /// Position 0 of the last layer.
    #[default]
    FinalCls,
    /// Mean over all states of the position-0 row.
    MeanLayersCls,
    /// Position-0 rows of all states, concatenated.
    ConcatLayersCls,
}

impl PoolingMode {
    pub const ALL: [PoolingMode; 3] = [
        PoolingMode::FinalCls,
        PoolingMode::MeanLayersCls,
        PoolingMode::ConcatLayersCls,
    ];

    pub fn feature_dim(self, hidden: usize, num_layers: usize) -> usize {
        match self {
            PoolingMode::ConcatLayersCls => (num_layers + 1) * hidden,
            _ => hidden,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PoolingMode::FinalCls => "final_cls",
            PoolingMode::MeanLayersCls => "mean_layers_cls",
            PoolingMode::ConcatLayersCls => "concat_layers_cls",
        }
    }
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PoolingMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ModelError::UnknownPooling(s.to_string()))
    }
}

/// Reduces layer activations to one feature vector.
pub fn pool<T: Scalar>(acts: &LayerActivations<T>, mode: PoolingMode) -> Result<Tensor<T>, ModelError> {
    let states = &acts.states;
    let last = states
        .last()
        .ok_or_else(|| ModelError::Config("no hidden states to pool".into()))?;
    Ok(match mode {
        PoolingMode::FinalCls => Tensor::vector(last.row(0).to_vec()),
        PoolingMode::MeanLayersCls => {
            let n = T::c(states.len() as f64);
            let mut acc = vec![T::zero(); last.cols()];
            for s in states {
                for (a, &v) in acc.iter_mut().zip(s.row(0)) {
                    *a += v;
                }
            }
            Tensor::vector(acc.into_iter().map(|v| v / n).collect())
        }
        PoolingMode::ConcatLayersCls => {
            Tensor::vector(states.iter().flat_map(|s| s.row(0).iter().copied()).collect())
        }
    })
}

/// Spreads a gradient on the pooled feature back onto each state's row 0.
pub fn pool_backward<T: Scalar>(
    d_feature: &Tensor<T>,
    mode: PoolingMode,
    num_states: usize,
    seq: usize,
    hidden: usize,
) -> Vec<Tensor<T>> {
    let mut grads = vec![Tensor::zeros(&[seq, hidden]); num_states];
    let d = d_feature.data();
    match mode {
        PoolingMode::FinalCls => grads[num_states - 1].row_mut(0).copy_from_slice(d),
        PoolingMode::MeanLayersCls => {
            let inv = T::one() / T::c(num_states as f64);
            for g in &mut grads {
                for (o, &v) in g.row_mut(0).iter_mut().zip(d) {
                    *o = v * inv;
                }
            }
        }
        PoolingMode::ConcatLayersCls => {
            for (i, g) in grads.iter_mut().enumerate() {
                g.row_mut(0).copy_from_slice(&d[i * hidden..(i + 1) * hidden]);
            }
        }
    }
    grads
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub config: EncoderConfig,
    pub embeddings: Embeddings<T>,
    pub layers: Vec<EncoderLayer<T>>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    embedding: EmbeddingCache<T>,
    pub layers: Vec<LayerCache<T>>,
    seq: usize,
}

impl<T: Scalar> Encoder<T> {
    /// Random initialisation: Normal(0, 0.02) weights, zero biases, unit
    /// layer-norm gains.
    pub fn init(config: EncoderConfig, rng: &mut RngState) -> Result<Self, ModelError> {
        config.validate()?;
        let embeddings = Embeddings::init(
            config.vocab_size,
            config.max_positions,
            config.hidden_dim,
            rng,
        );
        let layers = (0..config.num_layers)
            .map(|i| EncoderLayer::init(i, config.hidden_dim, config.num_heads, config.ffn_dim, rng))
            .collect();
        Ok(Self {
            config,
            embeddings,
            layers,
        })
    }

    pub fn embed(
        &self,
        sample: &TokenizedSample,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<Tensor<T>, ModelError> {
        Ok(self
            .embeddings
            .forward(&sample.token_ids, self.config.dropout_p, mode, rng)?
            .0)
    }

    /// Runs the full padded sequence and returns all hidden states.
    pub fn encode(
        &self,
        sample: &TokenizedSample,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<LayerActivations<T>, ModelError> {
        Ok(self
            .forward(&sample.token_ids, &sample.attention_mask, mode, rng)?
            .0)
    }

    /// Forward pass over explicit ids/mask, keeping what backward needs.
    pub fn forward(
        &self,
        ids: &[u32],
        mask: &[u8],
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(LayerActivations<T>, EncoderCache<T>), ModelError> {
        if ids.len() != mask.len() {
            return Err(ShapeError::new(format!(
                "{} token ids with a mask of {}",
                ids.len(),
                mask.len()
            ))
            .into());
        }
        let p = self.config.dropout_p;
        let (h0, embedding) = self.embeddings.forward(ids, p, mode, rng)?;
        let mut states = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        states.push(h0);
        for layer in &self.layers {
            let (h, cache) = layer.forward(states.last().expect("non-empty"), mask, p, mode, rng)?;
            states.push(h);
            caches.push(cache);
        }
        Ok((
            LayerActivations { states },
            EncoderCache {
                embedding,
                layers: caches,
                seq: ids.len(),
            },
        ))
    }

    /// Backpropagates per-state gradients (one `[seq, hidden]` tensor per
    /// entry of `states`), accumulating into every parameter.
    pub fn backward(&mut self, cache: &EncoderCache<T>, state_grads: &[Tensor<T>]) -> Result<(), ShapeError> {
        if state_grads.len() != self.layers.len() + 1 {
            return Err(ShapeError::new(format!(
                "{} state gradients for {} states",
                state_grads.len(),
                self.layers.len() + 1
            )));
        }
        let mut d = state_grads[self.layers.len()].clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            d = layer.backward(&cache.layers[i], &d)?;
            d.add_assign(&state_grads[i]);
        }
        self.embeddings.backward(&cache.embedding, &d);
        Ok(())
    }

    pub fn seq_len(cache: &EncoderCache<T>) -> usize {
        cache.seq
    }
}

impl<T: Scalar> Parameters<T> for Encoder<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.embeddings.visit_params(f);
        for l in &self.layers {
            l.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.embeddings.visit_params_mut(f);
        for l in &mut self.layers {
            l.visit_params_mut(f);
        }
    }
}
