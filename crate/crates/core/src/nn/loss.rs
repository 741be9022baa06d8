use super::activation::softmax_rows;
use crate::error::{NnError, ShapeError};
use crate::tensor::{Scalar, Tensor};

/// Mean two-class cross-entropy over a batch of logits `[n, 2]`.
///
/// Returns the loss and `∂loss/∂logits = (softmax − onehot) / n`.
pub fn cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u8],
) -> Result<(T, Tensor<T>), NnError> {
    if logits.shape().len() != 2 || logits.cols() != 2 || logits.rows() != labels.len() {
        return Err(ShapeError::new(format!(
            "logits {:?} against {} labels",
            logits.shape(),
            labels.len()
        ))
        .into());
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(NnError::Label(bad as u32));
    }
    let n = T::c(labels.len() as f64);
    let probs = softmax_rows(logits);
    let mut loss = T::zero();
    let mut grad = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row[0].max(row[1]);
        let log_z = max + ((row[0] - max).exp() + (row[1] - max).exp()).ln();
        loss += log_z - row[label as usize];
        grad.row_mut(i)[label as usize] -= T::one();
    }
    let grad = grad.scale(T::one() / n);
    Ok((loss / n, grad))
}
