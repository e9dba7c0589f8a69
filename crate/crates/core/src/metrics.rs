//! Classification accuracy and mean average precision.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check(scores: &Tensor, labels: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if scores.shape() != labels.shape() || scores.rank() != 2 {
        return Err(Error::shape(op, scores.shape(), labels.shape()));
    }
    if scores.shape()[0] == 0 {
        return Err(Error::MetricUndefined("no examples"));
    }
    Ok((scores.shape()[0], scores.shape()[1]))
}

/// Fraction of `(example, class)` entries where `score ≥ 0.5` agrees with
/// the label. `scores` are probabilities, both tensors `M×K`.
pub fn accuracy(scores: &Tensor, labels: &Tensor) -> Result<f64> {
    check(scores, labels, "accuracy")?;
    let hits = scores
        .data()
        .iter()
        .zip(labels.data())
        .filter(|(&p, &y)| (p >= 0.5) == (y >= 0.5))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Average precision of one ranking: mean precision at the rank of each
/// positive, ranked by descending score with ties broken by index.
/// `None` when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(total / positives as f64)
}

/// Mean over classes of [`average_precision`]; classes without positives
/// are skipped.
pub fn mean_average_precision(scores: &Tensor, labels: &Tensor) -> Result<f64> {
    let (m, k) = check(scores, labels, "mean_average_precision")?;
    let mut aps = Vec::with_capacity(k);
    for c in 0..k {
        let s: Vec<f64> = (0..m).map(|r| scores.data()[r * k + c]).collect();
        let y: Vec<bool> = (0..m).map(|r| labels.data()[r * k + c] >= 0.5).collect();
        aps.extend(average_precision(&s, &y));
    }
    if aps.is_empty() {
        return Err(Error::MetricUndefined("no class has a positive example"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}
