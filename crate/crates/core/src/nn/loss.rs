use super::{NnError, Result};
use crate::numcore::{softmax_in_place, Tensor};

/// Mean softmax cross-entropy over the batch. Returns the loss and
/// `dlogits = (softmax − onehot) / n`.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let c = logits.cols();
    let n = labels.len();
    if logits.shape().len() != 2 || logits.rows() != n {
        return Err(crate::numcore::NumError::Shape {
            op: "softmax_xent",
            left: logits.shape().to_vec(),
            right: vec![n],
        }
        .into());
    }
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (row, (probs, &label)) in grad.data_mut().chunks_mut(c).zip(labels).enumerate() {
        if label >= c {
            return Err(NnError::Label {
                row,
                label,
                classes: c,
            });
        }
        // log-sum-exp form keeps the loss finite for confident wrong rows
        let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + probs.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - probs[label];
        softmax_in_place(probs);
        probs[label] -= 1.0;
        probs.iter_mut().for_each(|g| *g /= n as f64);
    }
    Ok((loss / n as f64, grad))
}
