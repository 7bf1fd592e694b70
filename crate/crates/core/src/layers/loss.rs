//! Softmax head and categorical cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-wise softmax of `[B, n]` logits, with the row max subtracted first.
/// Exponentials and their sum are taken in `f64`.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return Err(Error::shape(format!(
            "softmax expects [B, n] logits, got {:?}",
            logits.shape()
        )));
    }
    let n = logits.shape()[1];
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(n) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v)).to_f64_lossy();
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64_lossy() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (v, e) in row.iter_mut().zip(exps) {
            *v = T::from_f64_lossy(e / total);
        }
    }
    Tensor::from_vec(logits.shape(), out)
}

/// Mean cross-entropy of `[B, n]` probabilities against integer labels, and
/// its gradient with respect to the logits, `(p - y) / B`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    if probs.rank() != 2 || probs.shape()[0] != labels.len() {
        return Err(Error::shape(format!(
            "cross entropy over {:?} probabilities with {} labels",
            probs.shape(),
            labels.len()
        )));
    }
    let n = probs.shape()[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::invalid(format!("label {bad} out of range for {n} classes")));
    }
    let batch = labels.len() as f64;
    let inv = T::from_f64_lossy(1.0 / batch);
    let mut loss = 0.0;
    let mut grad = probs.data().to_vec();
    for (row, &label) in grad.chunks_exact_mut(n).zip(labels) {
        loss -= row[label].to_f64_lossy().max(PROB_FLOOR).ln();
        row[label] = row[label] - T::one();
        row.iter_mut().for_each(|v| *v = *v * inv);
    }
    Ok((loss / batch, Tensor::from_vec(probs.shape(), grad)?))
}
