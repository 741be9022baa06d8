use crate::error::ModelError;
use crate::nn::dropout::dropout_backward;
use crate::nn::layer_norm::LayerNormCache;
use crate::nn::{dropout, LayerNorm, Mode, Parameter, Parameters, RngState};
use crate::tensor::{Scalar, Tensor};

/// Learned token and position tables followed by layer-norm and dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings<T> {
    pub token: Parameter<T>,
    pub position: Parameter<T>,
    pub norm: LayerNorm<T>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingCache<T> {
    ids: Vec<u32>,
    norm: LayerNormCache<T>,
    dropout: Option<Tensor<T>>,
}

impl<T: Scalar> Embeddings<T> {
    pub fn init(vocab: usize, positions: usize, hidden: usize, rng: &mut RngState) -> Self {
        Self {
            token: Parameter::normal("encoder.embeddings.token", &[vocab, hidden], 0.02, rng),
            position: Parameter::normal("encoder.embeddings.position", &[positions, hidden], 0.02, rng),
            norm: LayerNorm::new("encoder.embeddings.norm", hidden),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.token.value.cols()
    }

    /// `token[id] + position[i]` for every position, before normalisation.
    pub fn sum_tables(&self, ids: &[u32]) -> Result<Tensor<T>, ModelError> {
        let vocab = self.token.value.rows();
        let max = self.position.value.rows();
        if ids.len() > max {
            return Err(ModelError::SequenceTooLong { len: ids.len(), max });
        }
        let hidden = self.hidden_dim();
        let mut x = Tensor::zeros(&[ids.len(), hidden]);
        for (pos, &id) in ids.iter().enumerate() {
            if id as usize >= vocab {
                return Err(ModelError::TokenOutOfRange {
                    id,
                    position: pos,
                    vocab_size: vocab,
                });
            }
            let tok = self.token.value.row(id as usize);
            let p = self.position.value.row(pos);
            for ((o, &a), &b) in x.row_mut(pos).iter_mut().zip(tok).zip(p) {
                *o = a + b;
            }
        }
        Ok(x)
    }

    pub fn forward(
        &self,
        ids: &[u32],
        dropout_p: f64,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(Tensor<T>, EmbeddingCache<T>), ModelError> {
        let x = self.sum_tables(ids)?;
        let (normed, norm) = self.norm.forward(&x);
        let (out, mask) = dropout(&normed, dropout_p, mode, rng)?;
        Ok((
            out,
            EmbeddingCache {
                ids: ids.to_vec(),
                norm,
                dropout: mask,
            },
        ))
    }

    pub fn backward(&mut self, cache: &EmbeddingCache<T>, dy: &Tensor<T>) {
        let d_norm = dropout_backward(cache.dropout.as_ref(), dy);
        let dx = self.norm.backward(&cache.norm, &d_norm);
        for (pos, &id) in cache.ids.iter().enumerate() {
            let g = dx.row(pos);
            for (t, &v) in self.token.grad.row_mut(id as usize).iter_mut().zip(g) {
                *t += v;
            }
            for (t, &v) in self.position.grad.row_mut(pos).iter_mut().zip(g) {
                *t += v;
            }
        }
    }
}

impl<T: Scalar> Parameters<T> for Embeddings<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        f(&self.token);
        f(&self.position);
        self.norm.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.token);
        f(&mut self.position);
        self.norm.visit_params_mut(f);
    }
}
