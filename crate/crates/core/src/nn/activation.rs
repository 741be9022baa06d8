use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`]; the subgradient at 0 is taken to be 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    x.zip_map(dy, |v, g| if v > T::zero() { g } else { T::zero() })
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let v = x.as_f64();
    T::c(0.5 * v * (1.0 + libm::erf(v / SQRT_2)))
}

pub fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let v = x.as_f64();
    let cdf = 0.5 * (1.0 + libm::erf(v / SQRT_2));
    let pdf = INV_SQRT_2PI * (-0.5 * v * v).exp();
    T::c(cdf + v * pdf)
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    x.zip_map(dy, |v, g| g * gelu_grad_scalar(v))
}

/// Softmax of one slice in place, with max subtraction.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Row-wise softmax over the last axis of a matrix (a vector is one row).
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    let width = *x.shape().last().unwrap_or(&0);
    if width == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(width) {
        softmax_in_place(row);
    }
    out
}

/// Given softmax output `p` and upstream `dp`, returns the gradient w.r.t.
/// the softmax input, row by row.
pub fn softmax_rows_backward<T: Scalar>(p: &Tensor<T>, dp: &Tensor<T>) -> Tensor<T> {
    let width = *p.shape().last().unwrap_or(&0);
    let mut out = Tensor::zeros(p.shape());
    if width == 0 {
        return out;
    }
    for ((o, pr), dr) in out
        .data_mut()
        .chunks_mut(width)
        .zip(p.data().chunks(width))
        .zip(dp.data().chunks(width))
    {
        let inner: T = pr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
        for ((ov, &pv), &dv) in o.iter_mut().zip(pr).zip(dr) {
            *ov = pv * (dv - inner);
        }
    }
    out
}
