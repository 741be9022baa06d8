use super::{Parameter, Parameters, RngState};
use crate::error::ShapeError;
use crate::tensor::{Scalar, Tensor};

/// `x·W + b` for `x: [n,in]`, `W: [in,out]`, `b: [out]`.
pub fn dense_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, ShapeError> {
    if bias.shape() != [weight.cols()] {
        return Err(ShapeError::new(format!(
            "bias {:?} does not match weight {:?}",
            bias.shape(),
            weight.shape()
        )));
    }
    let mut y = x.matmul(weight)?;
    y.add_row_broadcast(bias);
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<DenseGrads<T>, ShapeError> {
    Ok(DenseGrads {
        input: dy.matmul_t(weight)?,
        weight: x.t_matmul(dy)?,
        bias: dy.sum_rows(),
    })
}

/// Fully connected layer owning its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Scalar> Dense<T> {
    /// Weights ~ Normal(0, `std`), zero bias.
    pub fn init(prefix: &str, input: usize, output: usize, std: f64, rng: &mut RngState) -> Self {
        Self {
            weight: Parameter::normal(format!("{prefix}.weight"), &[input, output], std, rng),
            bias: Parameter::zeros(format!("{prefix}.bias"), &[output]),
        }
    }

    pub fn zeros(prefix: &str, input: usize, output: usize) -> Self {
        Self {
            weight: Parameter::zeros(format!("{prefix}.weight"), &[input, output]),
            bias: Parameter::zeros(format!("{prefix}.bias"), &[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
        dense_forward(x, &self.weight.value, &self.bias.value)
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
        let g = dense_backward(x, &self.weight.value, dy)?;
        self.weight.grad.add_assign(&g.weight);
        self.bias.grad.add_assign(&g.bias);
        Ok(g.input)
    }
}

impl<T: Scalar> Parameters<T> for Dense<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
