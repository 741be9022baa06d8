use super::{Mode, RngState};
use crate::error::NnError;
use crate::tensor::{Scalar, Tensor};

/// Inverted dropout. Returns the output and the per-element scale that was
/// applied (`None` when the layer acted as the identity).
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: &mut RngState,
) -> Result<(Tensor<T>, Option<Tensor<T>>), NnError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::DropoutProbability(p));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::c(1.0 / (1.0 - p));
    let mut mask = Tensor::zeros(x.shape());
    for m in mask.data_mut() {
        if rng.uniform() >= p {
            *m = keep;
        }
    }
    Ok((x.zip_map(&mask, |a, m| a * m), Some(mask)))
}

pub fn dropout_backward<T: Scalar>(mask: Option<&Tensor<T>>, dy: &Tensor<T>) -> Tensor<T> {
    match mask {
        Some(m) => dy.zip_map(m, |g, s| g * s),
        None => dy.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::DropoutProbability(p));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn forward<T: Scalar>(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut RngState,
    ) -> (Tensor<T>, Option<Tensor<T>>) {
        dropout(x, self.p, mode, rng).expect("probability validated at construction")
    }
}
