use alloc::vec;
use alloc::vec::Vec;

use super::{NnError, Result, Tensor};
use crate::math;

/// Row-wise softmax over the last axis.
pub fn softmax(logits: &Tensor) -> Tensor {
    let n = *logits.shape().last().unwrap_or(&1);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        math::softmax_in_place(row);
    }
    out
}

/// Mean of `−log softmax(logits)[label]` over rows, and its gradient with
/// respect to the logits. Logits of any rank are treated as rows over the
/// last axis; `labels` holds one entry per row.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let n = *logits.shape().last().unwrap_or(&0);
    if n == 0 || logits.len() != labels.len() * n {
        return Err(NnError::ShapeMismatch {
            context: "softmax_cross_entropy".into(),
            expected: vec![labels.len(), n],
            got: logits.shape().to_vec(),
        });
    }
    let rows = labels.len() as f64;
    let mut grad: Vec<f64> = Vec::with_capacity(logits.len());
    let mut total = 0.0;
    for (row, &label) in logits.data().chunks_exact(n).zip(labels) {
        if label >= n {
            return Err(NnError::LabelOutOfRange { label, classes: n });
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| math::exp(z - max)).sum();
        let log_sum = math::ln(sum);
        total += -(row[label] - max - log_sum);
        for (j, &z) in row.iter().enumerate() {
            let p = math::exp(z - max - log_sum);
            grad.push((p - if j == label { 1.0 } else { 0.0 }) / rows);
        }
    }
    Ok((total / rows, Tensor::from_vec(logits.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_ln_k() {
        for k in [2usize, 3, 7, 19] {
            let logits = Tensor::from_vec(&[2, k], vec![0.25; 2 * k]).unwrap();
            let (loss, _) = softmax_cross_entropy(&logits, &[0, k - 1]).unwrap();
            assert!((loss - libm::log(k as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let logits = Tensor::from_vec(&[1, 3], vec![1000.0, -1000.0, 999.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(loss.is_finite() && grad.is_finite());
        let p = softmax(&logits);
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let logits = Tensor::zeros(&[1, 3]);
        assert_eq!(
            softmax_cross_entropy(&logits, &[3]).unwrap_err(),
            NnError::LabelOutOfRange {
                label: 3,
                classes: 3
            }
        );
    }
}
