//! Single-layer LSTM over a `T×d` sequence, recorded on the tape.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Taped handles of the LSTM weights. Gates are packed `[i | f | g | o]`
/// along the last axis of `w_x` (`d_in×4h`), `w_h` (`h×4h`) and `b` (`4h`).
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

/// Runs the LSTM from a zero state and returns the final hidden state `[1×h]`.
pub fn lstm_sequence(tape: &mut Tape, x: Var, w: LstmVars) -> Result<Var> {
    let xs = tape.value(x).shape().to_vec();
    if xs.len() != 2 || xs[0] == 0 {
        return Err(Error::invalid(
            "lstm_sequence",
            format!("input shape {xs:?}, need T×d with T ≥ 1"),
        ));
    }
    let hidden = tape.value(w.w_h).shape()[0];
    if tape.value(w.w_x).shape() != [xs[1], 4 * hidden] {
        return Err(Error::shape("lstm w_x", &xs, tape.value(w.w_x).shape()));
    }
    let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
    let mut c = tape.constant(Tensor::zeros(&[1, hidden]));
    for t in 0..xs[0] {
        let xt = tape.slice(x, 0, t, 1)?;
        (h, c) = lstm_cell(tape, xt, h, c, w)?;
    }
    Ok(h)
}

/// One step: returns `(h', c')` for input `x [1×d]` and state `h, c [1×h]`.
pub fn lstm_cell(tape: &mut Tape, x: Var, h: Var, c: Var, w: LstmVars) -> Result<(Var, Var)> {
    let hidden = tape.value(h).last_dim();
    let from_x = tape.linear(x, w.w_x, w.b)?;
    let from_h = tape.matmul(h, w.w_h)?;
    let pre = tape.add(from_x, from_h)?;
    let i = tape.slice(pre, 1, 0, hidden)?;
    let f = tape.slice(pre, 1, hidden, hidden)?;
    let g = tape.slice(pre, 1, 2 * hidden, hidden)?;
    let o = tape.slice(pre, 1, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(tape: &mut Tape, d: usize, h: usize, fill: f64) -> LstmVars {
        LstmVars {
            w_x: tape.leaf(Tensor::full(&[d, 4 * h], fill)),
            w_h: tape.leaf(Tensor::full(&[h, 4 * h], fill)),
            b: tape.leaf(Tensor::full(&[4 * h], fill)),
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut tape = Tape::new();
        let w = bind(&mut tape, 3, 2, 0.0);
        let x = tape.constant(Tensor::full(&[4, 3], 1.7));
        let h = lstm_sequence(&mut tape, x, w).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0, 0.0]);
    }

    #[test]
    fn single_step_equals_one_cell() {
        let mut tape = Tape::new();
        let w = bind(&mut tape, 2, 3, 0.1);
        let x = tape.constant(Tensor::from_rows(&[&[0.5, -1.0]]));
        let seq = lstm_sequence(&mut tape, x, w).unwrap();
        let h0 = tape.constant(Tensor::zeros(&[1, 3]));
        let c0 = tape.constant(Tensor::zeros(&[1, 3]));
        let (h, _) = lstm_cell(&mut tape, x, h0, c0, w).unwrap();
        assert_eq!(tape.value(seq), tape.value(h));
    }

    #[test]
    fn rejects_empty_sequence() {
        let mut tape = Tape::new();
        let w = bind(&mut tape, 2, 2, 0.1);
        let x = tape.constant(Tensor::zeros(&[0, 2]));
        assert!(lstm_sequence(&mut tape, x, w).is_err());
    }
}
