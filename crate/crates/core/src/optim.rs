//! SGD with momentum, global-norm gradient clipping and per-epoch decay.

use crate::error::{Error, Result};
use crate::model::Param;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub epoch: usize,
    velocity: Vec<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Factor applied to every gradient (1 when not clipped).
    pub scale: f64,
}

impl OptimState {
    pub fn new<'a>(
        shapes: impl IntoIterator<Item = &'a [usize]>,
        lr: f64,
        momentum: f64,
        clip_norm: f64,
    ) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(
                "optimizer",
                format!("learning rate {lr} must be positive"),
            ));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(
                "optimizer",
                format!("momentum {momentum} outside [0, 1)"),
            ));
        }
        if clip_norm.is_nan() || clip_norm <= 0.0 {
            return Err(Error::invalid(
                "optimizer",
                format!("clip norm {clip_norm} must be positive"),
            ));
        }
        Ok(OptimState {
            lr,
            momentum,
            clip_norm,
            epoch: 0,
            velocity: shapes.into_iter().map(Tensor::zeros).collect(),
        })
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }
}

/// One update from the parameters' gradient buffers:
/// clip to `clip_norm` by global norm, then `v ← μv − lr·g`, `θ ← θ + v`.
/// Gradients are left in place.
pub fn sgd_step(params: &mut [(&str, &mut Param)], state: &mut OptimState) -> Result<StepStats> {
    if params.len() != state.velocity.len() {
        return Err(Error::invalid(
            "sgd_step",
            format!("{} parameters, {} velocity buffers", params.len(), state.velocity.len()),
        ));
    }
    let mut norm_sq = 0.0;
    for ((name, p), v) in params.iter().zip(&state.velocity) {
        if p.grad.shape() != v.shape() || p.value.shape() != v.shape() {
            return Err(Error::shape("sgd_step", p.value.shape(), v.shape()));
        }
        if !p.grad.is_finite() {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
        norm_sq += p.grad.norm_sq();
    }
    let grad_norm = norm_sq.sqrt();
    let scale = if grad_norm > state.clip_norm {
        state.clip_norm / grad_norm
    } else {
        1.0
    };
    let (lr, mu) = (state.lr, state.momentum);
    for ((_, p), v) in params.iter_mut().zip(&mut state.velocity) {
        let Param { value, grad } = &mut **p;
        for ((x, vel), g) in value.data_mut().iter_mut().zip(v.data_mut()).zip(grad.data()) {
            *vel = mu * *vel - lr * (scale * g);
            *x += *vel;
        }
    }
    Ok(StepStats { grad_norm, scale })
}

/// End-of-epoch learning-rate decay.
pub fn lr_decay(state: &mut OptimState, factor: f64) {
    state.lr *= factor;
    state.epoch += 1;
}
