use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tape handles of a [`super::NonLocalBlock`].
#[derive(Clone, Copy, Debug)]
pub struct NonLocalVars {
    pub theta: Var,
    pub phi: Var,
    pub g: Var,
    pub out: Var,
    pub use_residual: bool,
}

/// Non-local attention over a set of `k` items (`[k×d]`).
///
/// Pairwise affinity is the scaled dot product of the `theta` and `phi`
/// projections; rows are normalized with a softmax over valid items, and
/// each valid output is `out · Σ_j a_ij · g(v_j)`, plus `v_i` with the
/// residual. Invalid rows pass their input through and get an all-zero
/// attention row. Returns the outputs and the `[k×k]` attention.
pub fn non_local(tape: &mut Tape, block: NonLocalVars, items: Var, valid: &[bool]) -> Result<(Var, Tensor)> {
    let shape = tape.value(items).shape().to_vec();
    if shape.len() != 2 || shape[0] != valid.len() {
        return Err(Error::shape("non_local", &shape, &[valid.len()]));
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::DegenerateSet);
    }
    let (k, d) = (shape[0], shape[1]);
    let d_k = tape.value(block.theta).shape()[1];
    let all_valid = valid.iter().all(|&v| v);

    let q = tape.matmul(items, block.theta)?;
    let key = tape.matmul(items, block.phi)?;
    let scores = tape.matmul_nt(q, key)?;
    let scores = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    let col_mask = (!all_valid).then(|| (0..k * k).map(|idx| valid[idx % k]).collect());
    let attn = tape.softmax(scores, col_mask)?;
    let values = tape.matmul(items, block.g)?;
    let mixed = tape.matmul(attn, values)?;
    let mut update = tape.matmul(mixed, block.out)?;

    let row_mask = |keep: bool| -> Tensor {
        let mut m = Tensor::zeros(&[k, d]);
        for (i, &v) in valid.iter().enumerate() {
            if v == keep {
                m.data_mut()[i * d..(i + 1) * d].fill(1.0);
            }
        }
        m
    };
    if !all_valid {
        update = tape.mul_const(update, row_mask(true))?;
    }
    let out = if block.use_residual {
        tape.add(update, items)?
    } else if all_valid {
        update
    } else {
        let passthrough = tape.mul_const(items, row_mask(false))?;
        tape.add(update, passthrough)?
    };

    let mut attention = tape.value(attn).clone();
    for (i, &v) in valid.iter().enumerate() {
        if !v {
            attention.data_mut()[i * k..(i + 1) * k].fill(0.0);
        }
    }
    Ok((out, attention))
}
