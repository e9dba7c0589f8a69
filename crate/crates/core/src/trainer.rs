//! Training loop and evaluation over segment datasets.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, mean_average_precision};
use crate::model::{loss_and_grads, run_taped, Architecture, StagParams};
use crate::optim::{lr_decay, sgd_step, OptimState};
use crate::rng;
use crate::segment::VideoSegment;
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy,map,lr";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub decay: f64,
    pub clip_norm: f64,
    /// Seeds the per-epoch visiting order.
    pub seed: u64,
    /// Segments whose gradients are summed before each step.
    pub accumulate: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            lr: 0.01,
            momentum: 0.9,
            decay: 0.5,
            clip_norm: 5.0,
            seed: 0,
            accumulate: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        OptimState::new(std::iter::empty(), self.lr, self.momentum, self.clip_norm)?;
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid(
                "train config",
                format!("decay {} outside (0, 1]", self.decay),
            ));
        }
        if self.accumulate == 0 {
            return Err(Error::invalid("train config", "accumulate must be at least 1"));
        }
        Ok(())
    }
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    /// NaN when the split has no positives.
    pub map: f64,
    /// Learning rate in effect during the epoch.
    pub lr: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.split, self.loss, self.accuracy, self.map, self.lr
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Loss, accuracy and mAP of a model on a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub map: f64,
}

/// Class logits of one segment.
pub fn predict(segment: &VideoSegment, params: &StagParams, arch: Architecture) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = run_taped(&mut tape, segment, params, &vars, arch, false)?;
    Ok(tape.value(out.logits).clone())
}

fn summarize(logits: &[Tensor], labels: &[Tensor], loss: f64) -> Result<Evaluation> {
    let k = labels
        .first()
        .map(|l| l.len())
        .ok_or(Error::MetricUndefined("no examples"))?;
    let probs: Vec<f64> = logits
        .iter()
        .flat_map(|l| l.data().iter().map(|&z| sigmoid(z)))
        .collect();
    let ys: Vec<f64> = labels.iter().flat_map(|l| l.data().iter().copied()).collect();
    let probs = Tensor::new(vec![logits.len(), k], probs)?;
    let ys = Tensor::new(vec![labels.len(), k], ys)?;
    Ok(Evaluation {
        loss: loss / logits.len() as f64,
        accuracy: accuracy(&probs, &ys)?,
        map: match mean_average_precision(&probs, &ys) {
            Ok(m) => m,
            Err(Error::MetricUndefined(_)) => f64::NAN,
            Err(e) => return Err(e),
        },
    })
}

pub fn evaluate(data: &[VideoSegment], params: &StagParams, arch: Architecture) -> Result<Evaluation> {
    let mut logits = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    for seg in data {
        let z = predict(seg, params, arch)?;
        let y = seg.label_tensor();
        loss += crate::loss::bce_with_logits(&z, &y)?;
        logits.push(z);
        labels.push(y);
    }
    summarize(&logits, &labels, loss)
}

/// Trains in place with SGD, one segment per step unless accumulation is
/// set. The visiting order is reshuffled every epoch from `config.seed`.
///
/// Returns one `train` row per epoch, plus an `eval` row when `eval_data`
/// is given. Training metrics come from the logits seen during the epoch.
pub fn train(
    params: &mut StagParams,
    data: &[VideoSegment],
    eval_data: Option<&[VideoSegment]>,
    arch: Architecture,
    config: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    train_with(params, data, eval_data, arch, config, |_| {})
}

/// [`train`] with a callback invoked after each epoch's rows are computed.
pub fn train_with(
    params: &mut StagParams,
    data: &[VideoSegment],
    eval_data: Option<&[VideoSegment]>,
    arch: Architecture,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&[EpochMetrics]),
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("train", "empty dataset"));
    }
    let shapes: Vec<Vec<usize>> = params.named().iter().map(|(_, p)| p.value.shape().to_vec()).collect();
    let mut state = OptimState::new(
        shapes.iter().map(|s| s.as_slice()),
        config.lr,
        config.momentum,
        config.clip_norm,
    )?;
    let mut rows = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::rng(rng::derive(
            rng::derive_named(config.seed, "epoch"),
            epoch as u64,
        )));
        let lr = state.lr;
        let mut logits = Vec::with_capacity(data.len());
        let mut labels = Vec::with_capacity(data.len());
        let mut loss = 0.0;
        params.zero_grad();
        for (step, &i) in order.iter().enumerate() {
            let (l, z) = loss_and_grads(&data[i], params, arch)?;
            loss += l;
            logits.push(z);
            labels.push(data[i].label_tensor());
            if (step + 1) % config.accumulate == 0 || step + 1 == order.len() {
                sgd_step(&mut params.named_mut(), &mut state)?;
                params.zero_grad();
            }
        }
        let train_eval = summarize(&logits, &labels, loss)?;
        let mut epoch_rows = vec![row(epoch + 1, "train", train_eval, lr)];
        if let Some(ev) = eval_data {
            epoch_rows.push(row(epoch + 1, "eval", evaluate(ev, params, arch)?, lr));
        }
        on_epoch(&epoch_rows);
        rows.extend(epoch_rows);
        lr_decay(&mut state, config.decay);
    }
    Ok(rows)
}

fn row(epoch: usize, split: &str, e: Evaluation, lr: f64) -> EpochMetrics {
    EpochMetrics {
        epoch,
        split: split.to_string(),
        loss: e.loss,
        accuracy: e.accuracy,
        map: e.map,
        lr,
    }
}
