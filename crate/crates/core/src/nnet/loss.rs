use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor4;

/// Mean softmax cross-entropy over the batch, with the gradient with
/// respect to the logits. Logits are `[N, K, 1, 1]` (or any `[N, K*...]`
/// flattened per sample).
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor4<T>,
    labels: &[usize],
) -> Result<(f64, Tensor4<T>)> {
    let n = logits.batch();
    let k = logits.sample_len();
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let mut grad = Tensor4::zeros(logits.dims());
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    for (s, &label) in labels.iter().enumerate() {
        let z = logits.sample(s);
        let max = z
            .iter()
            .map(|v| v.as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        total += sum.ln() - (z[label].as_f64() - max);
        for (j, (g, e)) in grad.sample_mut(s).iter_mut().zip(&exps).enumerate() {
            let p = e / sum;
            let target = if j == label { 1.0 } else { 0.0 };
            *g = T::of((p - target) * inv_n);
        }
    }
    Ok((total * inv_n, grad))
}
