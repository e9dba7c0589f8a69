//! Binary cross-entropy on logits.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean over classes of `ln(1 + exp(-(2y - 1) z))`, evaluated without
/// overflow for large `|z|`.
pub fn bce_with_logits(logits: &Tensor, labels: &Tensor) -> Result<f64> {
    if logits.shape() != labels.shape() {
        return Err(Error::shape("bce_with_logits", logits.shape(), labels.shape()));
    }
    if let Some(&bad) = labels.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::NonBinaryLabel(bad));
    }
    if logits.is_empty() {
        return Err(Error::invalid("bce_with_logits", "no classes"));
    }
    let total: f64 = logits
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&z, &y)| softplus(-(2.0 * y - 1.0) * z))
        .sum();
    Ok(total / logits.len() as f64)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
