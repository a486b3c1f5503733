use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = logits.clone();
    let w = logits.item_len();
    if w == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(w) {
        softmax_in_place(row);
    }
    out
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy_loss<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    weighted_cross_entropy_loss(logits, labels, None)
}

/// Cross-entropy with optional per-sample weights.
///
/// With weights the loss is `sum(w_i * ce_i) / sum(w_i)`; without them
/// every weight is one, which gives the plain batch mean and the gradient
/// `(softmax - onehot) / batch`.
pub fn weighted_cross_entropy_loss<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    weights: Option<&[T]>,
) -> Result<(T, Tensor<T>)> {
    if logits.shape().len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "logits must be [batch, classes], got {:?}",
            logits.shape()
        )));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::shape("labels", &[n], &[labels.len()]));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::shape("sample weights", &[n], &[w.len()]));
        }
    }
    let weight = |i: usize| weights.map_or(T::one(), |w| w[i]);
    let total: T = (0..n).fold(T::zero(), |acc, i| acc + weight(i));
    if !(total > T::zero()) {
        return Err(Error::InvalidArgument("sample weights sum to zero".into()));
    }

    let mut grad = logits.clone();
    let mut loss = T::zero();
    for (i, row) in grad.data_mut().chunks_mut(k).enumerate() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().fold(T::zero(), |a, &z| a + (z - max).exp()).ln() + max;
        let scale = weight(i) / total;
        loss = loss + scale * (lse - row[labels[i]]);
        for v in row.iter_mut() {
            *v = (*v - lse).exp() * scale;
        }
        row[labels[i]] = row[labels[i]] - scale;
    }
    Ok((loss, grad))
}
