use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean softmax cross-entropy over the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct XentOutput<S> {
    pub loss: S,
    /// Gradient of the mean loss with respect to the logits.
    pub grad: Tensor2<S>,
    /// Rows whose argmax equals the label.
    pub correct: usize,
}

/// Row-wise softmax, shifted by the row maximum for stability.
pub fn softmax<S: Scalar>(logits: &Tensor2<S>) -> Tensor2<S> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut z = S::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

pub fn softmax_xent<S: Scalar>(logits: &Tensor2<S>, labels: &[usize]) -> Result<XentOutput<S>> {
    let (b, c) = logits.shape();
    if labels.len() != b {
        return Err(Error::ShapeMismatch {
            op: "softmax_xent",
            expected: format!("{b} labels"),
            found: labels.len().to_string(),
        });
    }
    if b == 0 {
        return Err(Error::InvalidArgument("softmax_xent on an empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let mut grad = softmax(logits);
    let scale = S::one() / S::of(b as f64);
    let mut total = S::zero();
    let mut correct = 0;
    for (r, &y) in labels.iter().enumerate() {
        let logit_row = logits.row(r);
        let m = logit_row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = m + logit_row.iter().map(|&v| (v - m).exp()).sum::<S>().ln();
        total += lse - logit_row[y];
        let best = (0..c).fold(0, |best, k| if logit_row[k] > logit_row[best] { k } else { best });
        if best == y {
            correct += 1;
        }
        let row = grad.row_mut(r);
        row[y] -= S::one();
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok(XentOutput { loss, grad, correct })
}
