use super::attention::{AttentionCache, SelfAttention};
use crate::error::{ModelError, ShapeError};
use crate::nn::activation::{gelu, gelu_backward};
use crate::nn::dropout::dropout_backward;
use crate::nn::layer_norm::LayerNormCache;
use crate::nn::{dropout, Dense, LayerNorm, Mode, Parameter, Parameters, RngState};
use crate::tensor::{Scalar, Tensor};

/// Position-wise `dense → GELU → dense → dropout`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<T> {
    pub inner: Dense<T>,
    pub outer: Dense<T>,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache<T> {
    input: Tensor<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
    dropout: Option<Tensor<T>>,
}

impl<T: Scalar> FeedForward<T> {
    pub fn init(prefix: &str, hidden: usize, ffn: usize, rng: &mut RngState) -> Self {
        Self {
            inner: Dense::init(&format!("{prefix}.inner"), hidden, ffn, 0.02, rng),
            outer: Dense::init(&format!("{prefix}.outer"), ffn, hidden, 0.02, rng),
        }
    }

    pub fn forward(
        &self,
        h: &Tensor<T>,
        dropout_p: f64,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(Tensor<T>, FeedForwardCache<T>), ModelError> {
        let pre = self.inner.forward(h)?;
        let act = gelu(&pre);
        let o = self.outer.forward(&act)?;
        let (out, mask) = dropout(&o, dropout_p, mode, rng)?;
        Ok((
            out,
            FeedForwardCache {
                input: h.clone(),
                pre,
                act,
                dropout: mask,
            },
        ))
    }

    pub fn backward(&mut self, cache: &FeedForwardCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
        let d_o = dropout_backward(cache.dropout.as_ref(), dy);
        let d_act = self.outer.backward(&cache.act, &d_o)?;
        let d_pre = gelu_backward(&cache.pre, &d_act);
        self.inner.backward(&cache.input, &d_pre)
    }
}

impl<T: Scalar> Parameters<T> for FeedForward<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.inner.visit_params(f);
        self.outer.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.inner.visit_params_mut(f);
        self.outer.visit_params_mut(f);
    }
}

/// Post-norm transformer block:
/// `h₁ = LN(h + MHSA(h))`, `out = LN(h₁ + FFN(h₁))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub attention: SelfAttention<T>,
    pub attention_norm: LayerNorm<T>,
    pub feed_forward: FeedForward<T>,
    pub output_norm: LayerNorm<T>,
}

#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    pub attention: AttentionCache<T>,
    attention_norm: LayerNormCache<T>,
    feed_forward: FeedForwardCache<T>,
    output_norm: LayerNormCache<T>,
}

impl<T: Scalar> EncoderLayer<T> {
    pub fn init(index: usize, hidden: usize, heads: usize, ffn: usize, rng: &mut RngState) -> Self {
        let prefix = format!("encoder.layers.{index}");
        Self {
            attention: SelfAttention::init(&format!("{prefix}.attention"), hidden, heads, rng),
            attention_norm: LayerNorm::new(&format!("{prefix}.attention_norm"), hidden),
            feed_forward: FeedForward::init(&format!("{prefix}.ffn"), hidden, ffn, rng),
            output_norm: LayerNorm::new(&format!("{prefix}.output_norm"), hidden),
        }
    }

    pub fn forward(
        &self,
        h: &Tensor<T>,
        mask: &[u8],
        dropout_p: f64,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(Tensor<T>, LayerCache<T>), ModelError> {
        let (a, attention) = self.attention.forward(h, mask, dropout_p, mode, rng)?;
        let (h1, attention_norm) = self.attention_norm.forward(&h.add(&a));
        let (f, feed_forward) = self.feed_forward.forward(&h1, dropout_p, mode, rng)?;
        let (out, output_norm) = self.output_norm.forward(&h1.add(&f));
        Ok((
            out,
            LayerCache {
                attention,
                attention_norm,
                feed_forward,
                output_norm,
            },
        ))
    }

    pub fn backward(&mut self, cache: &LayerCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
        let d_sum2 = self.output_norm.backward(&cache.output_norm, dy);
        let mut d_h1 = self.feed_forward.backward(&cache.feed_forward, &d_sum2)?;
        d_h1.add_assign(&d_sum2);
        let d_sum1 = self.attention_norm.backward(&cache.attention_norm, &d_h1);
        let mut d_h = self.attention.backward(&cache.attention, &d_sum1)?;
        d_h.add_assign(&d_sum1);
        Ok(d_h)
    }
}

impl<T: Scalar> Parameters<T> for EncoderLayer<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.attention.visit_params(f);
        self.attention_norm.visit_params(f);
        self.feed_forward.visit_params(f);
        self.output_norm.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.attention.visit_params_mut(f);
        self.attention_norm.visit_params_mut(f);
        self.feed_forward.visit_params_mut(f);
        self.output_norm.visit_params_mut(f);
    }
}
