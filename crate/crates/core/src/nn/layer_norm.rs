use super::{Parameter, Parameters};
use crate::tensor::{Scalar, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Everything the backward pass needs from one layer-norm application.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

/// Per-row standardisation followed by `gamma ⊙ x̂ + beta`.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> (Tensor<T>, LayerNormCache<T>) {
    let width = *x.shape().last().expect("layer_norm on a scalar");
    assert!(width >= 1, "layer_norm over an empty feature axis");
    assert_eq!(gamma.len(), width, "gamma width");
    assert_eq!(beta.len(), width, "beta width");
    let n = T::c(width as f64);
    let eps = T::c(eps);

    let mut normalized = x.clone();
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.len() / width);
    for (xr, yr) in normalized
        .data_mut()
        .chunks_mut(width)
        .zip(out.data_mut().chunks_mut(width))
    {
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let r = T::one() / (var + eps).sqrt();
        inv_std.push(r);
        for (i, (xv, yv)) in xr.iter_mut().zip(yr.iter_mut()).enumerate() {
            *xv = (*xv - mean) * r;
            *yv = *xv * gamma.data()[i] + beta.data()[i];
        }
    }
    (out, LayerNormCache { normalized, inv_std })
}

pub struct LayerNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> LayerNormGrads<T> {
    let width = gamma.len();
    let n = T::c(width as f64);
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = Tensor::zeros(&[width]);
    let mut dbeta = Tensor::zeros(&[width]);
    let mut dxhat = vec![T::zero(); width];
    for (((dxr, xh), dyr), &r) in dx
        .data_mut()
        .chunks_mut(width)
        .zip(cache.normalized.data().chunks(width))
        .zip(dy.data().chunks(width))
        .zip(&cache.inv_std)
    {
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for i in 0..width {
            dxhat[i] = dyr[i] * gamma.data()[i];
            sum_d += dxhat[i];
            sum_dx += dxhat[i] * xh[i];
            dgamma.data_mut()[i] += dyr[i] * xh[i];
            dbeta.data_mut()[i] += dyr[i];
        }
        for i in 0..width {
            dxr[i] = r / n * (n * dxhat[i] - sum_d - xh[i] * sum_dx);
        }
    }
    LayerNormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(prefix: &str, width: usize) -> Self {
        Self {
            gamma: Parameter::new(format!("{prefix}.gamma"), Tensor::full(&[width], T::one())),
            beta: Parameter::zeros(format!("{prefix}.beta"), &[width]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, LayerNormCache<T>) {
        layer_norm(x, &self.gamma.value, &self.beta.value, LAYER_NORM_EPS)
    }

    pub fn backward(&mut self, cache: &LayerNormCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let g = layer_norm_backward(cache, &self.gamma.value, dy);
        self.gamma.grad.add_assign(&g.gamma);
        self.beta.grad.add_assign(&g.beta);
        g.input
    }
}

impl<T: Scalar> Parameters<T> for LayerNorm<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}
