use crate::error::{ModelError, ShapeError};
use crate::nn::activation::{softmax_in_place, softmax_rows_backward};
use crate::nn::dropout::dropout_backward;
use crate::nn::{dropout, Dense, Mode, Parameter, Parameters, RngState};
use crate::tensor::{Scalar, Tensor};

/// Additive logit bias on masked-out keys.
pub const MASK_BIAS: f64 = -1e9;

/// Multi-head scaled dot-product self-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention<T> {
    pub num_heads: usize,
    pub query: Dense<T>,
    pub key: Dense<T>,
    pub value: Dense<T>,
    pub output: Dense<T>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    input: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    /// Per-head attention weights before dropout, `[seq, seq]`.
    probs: Vec<Tensor<T>>,
    dropped: Vec<Option<Tensor<T>>>,
    context: Tensor<T>,
}

impl<T> AttentionCache<T> {
    pub fn probabilities(&self) -> &[Tensor<T>] {
        &self.probs
    }
}

impl<T: Scalar> SelfAttention<T> {
    pub fn init(prefix: &str, hidden: usize, num_heads: usize, rng: &mut RngState) -> Self {
        Self {
            num_heads,
            query: Dense::init(&format!("{prefix}.query"), hidden, hidden, 0.02, rng),
            key: Dense::init(&format!("{prefix}.key"), hidden, hidden, 0.02, rng),
            value: Dense::init(&format!("{prefix}.value"), hidden, hidden, 0.02, rng),
            output: Dense::init(&format!("{prefix}.output"), hidden, hidden, 0.02, rng),
        }
    }

    fn head_dim(&self) -> usize {
        self.query.output_dim() / self.num_heads
    }

    pub fn forward(
        &self,
        h: &Tensor<T>,
        mask: &[u8],
        dropout_p: f64,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(Tensor<T>, AttentionCache<T>), ModelError> {
        let seq = h.rows();
        if mask.len() != seq {
            return Err(ShapeError::new(format!("mask of {} for {seq} positions", mask.len())).into());
        }
        let q = self.query.forward(h)?;
        let k = self.key.forward(h)?;
        let v = self.value.forward(h)?;
        let d = self.head_dim();
        let scale = T::c(1.0 / (d as f64).sqrt());
        let bias = T::c(MASK_BIAS);

        let mut context = Tensor::zeros(&[seq, q.cols()]);
        let mut probs = Vec::with_capacity(self.num_heads);
        let mut dropped = Vec::with_capacity(self.num_heads);
        for head in 0..self.num_heads {
            let qh = q.slice_cols(head * d, d);
            let kh = k.slice_cols(head * d, d);
            let vh = v.slice_cols(head * d, d);
            let mut scores = qh.matmul_t(&kh)?;
            for i in 0..seq {
                let row = scores.row_mut(i);
                for (j, s) in row.iter_mut().enumerate() {
                    *s *= scale;
                    if mask[j] == 0 {
                        *s += bias;
                    }
                }
                softmax_in_place(row);
            }
            let (p_drop, keep) = dropout(&scores, dropout_p, mode, rng)?;
            context.set_cols(head * d, &p_drop.matmul(&vh)?);
            probs.push(scores);
            dropped.push(keep);
        }
        let out = self.output.forward(&context)?;
        Ok((
            out,
            AttentionCache {
                input: h.clone(),
                q,
                k,
                v,
                probs,
                dropped,
                context,
            },
        ))
    }

    pub fn backward(&mut self, cache: &AttentionCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
        let d_context = self.output.backward(&cache.context, dy)?;
        let d = self.head_dim();
        let scale = T::c(1.0 / (d as f64).sqrt());
        let mut dq = Tensor::zeros(cache.q.shape());
        let mut dk = Tensor::zeros(cache.k.shape());
        let mut dv = Tensor::zeros(cache.v.shape());
        for head in 0..self.num_heads {
            let qh = cache.q.slice_cols(head * d, d);
            let kh = cache.k.slice_cols(head * d, d);
            let vh = cache.v.slice_cols(head * d, d);
            let dch = d_context.slice_cols(head * d, d);
            let keep = cache.dropped[head].as_ref();
            let p_used = match keep {
                Some(m) => cache.probs[head].zip_map(m, |p, s| p * s),
                None => cache.probs[head].clone(),
            };
            dv.set_cols(head * d, &p_used.t_matmul(&dch)?);
            let dp_used = dch.matmul_t(&vh)?;
            let dp = dropout_backward(keep, &dp_used);
            let ds = softmax_rows_backward(&cache.probs[head], &dp).scale(scale);
            dq.set_cols(head * d, &ds.matmul(&kh)?);
            dk.set_cols(head * d, &ds.t_matmul(&qh)?);
        }
        let mut dh = self.query.backward(&cache.input, &dq)?;
        dh.add_assign(&self.key.backward(&cache.input, &dk)?);
        dh.add_assign(&self.value.backward(&cache.input, &dv)?);
        Ok(dh)
    }
}

impl<T: Scalar> Parameters<T> for SelfAttention<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.query.visit_params(f);
        self.key.visit_params(f);
        self.value.visit_params(f);
        self.output.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.query.visit_params_mut(f);
        self.key.visit_params_mut(f);
        self.value.visit_params_mut(f);
        self.output.visit_params_mut(f);
    }
}
