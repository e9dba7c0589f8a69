//! Reverse-mode differentiation on a recorded tape.
//!
//! Every op appends a node holding its value and a backward closure. Nodes
//! are only ever appended after their parents, so walking the tape in
//! reverse index order is a valid topological order.
//!
//! [`Tape::backward`] propagates through a fresh set of buffers and then adds
//! the result into each node's persistent gradient, so calling it twice
//! without [`Tape::zero_grad`] doubles every gradient.

use crate::error::{Error, Result};
use crate::tensor::{self, gemm_nn, gemm_nt, gemm_tn, split_axis, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Given the output gradient, the parent values, the output value and which
/// parents need a gradient, returns one optional gradient per parent.
pub type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor, &[bool]) -> Vec<Option<Tensor>>>;

/// One recorded value with its gradient and chain-rule closure.
pub struct DiffNode {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
}

impl DiffNode {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    /// Accumulated gradient; zeros of the value's shape until a backward pass
    /// reaches this node.
    pub fn grad(&self) -> Tensor {
        self.grad.clone().unwrap_or_else(|| Tensor::zeros(self.value.shape()))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<DiffNode>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(DiffNode {
            value,
            grad: None,
            requires_grad: true,
            parents: vec![],
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(DiffNode {
            value,
            grad: None,
            requires_grad: false,
            parents: vec![],
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn node(&self, v: Var) -> &DiffNode {
        &self.nodes[v.0]
    }

    pub fn grad(&self, v: Var) -> Tensor {
        self.nodes[v.0].grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Records a new node. Used by ops outside this module (RoIAlign, LSTM
    /// helpers) that bring their own backward.
    pub fn push(&mut self, value: Tensor, parents: Vec<Var>, backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(DiffNode {
            value,
            grad: None,
            requires_grad,
            backward: requires_grad.then_some(backward),
            parents,
        });
        Var(self.nodes.len() - 1)
    }

    /// Backpropagates from a scalar node, adding into persistent gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(bw) = &node.backward {
                let parents: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                let need: Vec<bool> = node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
                let pgrads = bw(&g, &parents, &node.value, &need);
                debug_assert_eq!(pgrads.len(), node.parents.len());
                for ((p, pg), n) in node.parents.iter().zip(pgrads).zip(&need) {
                    let Some(pg) = pg else { continue };
                    if !n {
                        continue;
                    }
                    debug_assert_eq!(pg.shape(), self.nodes[p.0].value.shape());
                    match &mut grads[p.0] {
                        Some(acc) => acc.accumulate(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            }
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.accumulate(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let (m, k) = (self.value(a).shape()[0], self.value(a).shape()[1]);
        let n = self.value(b).shape()[1];
        Ok(self.push(
            out,
            vec![a, b],
            Box::new(move |g, p, _, need| {
                let da = need[0].then(|| {
                    let mut d = vec![0.0; m * k];
                    gemm_nt(g.data(), p[1].data(), &mut d, m, n, k);
                    Tensor::new(vec![m, k], d).unwrap()
                });
                let db = need[1].then(|| {
                    let mut d = vec![0.0; k * n];
                    gemm_tn(p[0].data(), g.data(), &mut d, k, m, n);
                    Tensor::new(vec![k, n], d).unwrap()
                });
                vec![da, db]
            }),
        ))
    }

    /// `a[m×k] · b[n×k]ᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("matmul_nt", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut c = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut c, m, k, n);
        let out = Tensor::new(vec![m, n], c)?;
        Ok(self.push(
            out,
            vec![a, b],
            Box::new(move |g, p, _, need| {
                let da = need[0].then(|| {
                    let mut d = vec![0.0; m * k];
                    gemm_nn(g.data(), p[1].data(), &mut d, m, n, k);
                    Tensor::new(vec![m, k], d).unwrap()
                });
                let db = need[1].then(|| {
                    let mut d = vec![0.0; n * k];
                    gemm_tn(g.data(), p[0].data(), &mut d, n, m, k);
                    Tensor::new(vec![n, k], d).unwrap()
                });
                vec![da, db]
            }),
        ))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = tensor::linear(self.value(x), self.value(w), self.value(b))?;
        let (p_dim, q) = (self.value(w).shape()[0], self.value(w).shape()[1]);
        let m = self.value(x).leading();
        Ok(self.push(
            out,
            vec![x, w, b],
            Box::new(move |g, p, _, need| {
                let dx = need[0].then(|| {
                    let mut d = vec![0.0; m * p_dim];
                    gemm_nt(g.data(), p[1].data(), &mut d, m, q, p_dim);
                    Tensor::new(p[0].shape().to_vec(), d).unwrap()
                });
                let dw = need[1].then(|| {
                    let mut d = vec![0.0; p_dim * q];
                    gemm_tn(p[0].data(), g.data(), &mut d, p_dim, m, q);
                    Tensor::new(vec![p_dim, q], d).unwrap()
                });
                let db = need[2].then(|| {
                    let mut d = vec![0.0; q];
                    for r in 0..m {
                        for (acc, v) in d.iter_mut().zip(&g.data()[r * q..(r + 1) * q]) {
                            *acc += v;
                        }
                    }
                    Tensor::vector(d)
                });
                vec![dx, dw, db]
            }),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(
            out,
            vec![a, b],
            Box::new(|g, _, _, need| vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())]),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(
            out,
            vec![a, b],
            Box::new(|g, p, _, need| {
                vec![
                    need[0].then(|| g.zip_map(p[1], "mul", |x, y| x * y).unwrap()),
                    need[1].then(|| g.zip_map(p[0], "mul", |x, y| x * y).unwrap()),
                ]
            }),
        ))
    }

    /// Elementwise product with a fixed tensor (masks, constants).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let out = self.value(a).zip_map(&c, "mul_const", |x, y| x * y)?;
        Ok(self.push(
            out,
            vec![a],
            Box::new(move |g, _, _, _| vec![Some(g.zip_map(&c, "mul_const", |x, y| x * y).unwrap())]),
        ))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, vec![a], Box::new(move |g, _, _, _| vec![Some(g.scale(s))]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = tensor::relu(self.value(a));
        self.push(
            out,
            vec![a],
            Box::new(|g, p, _, _| {
                vec![Some(
                    g.zip_map(p[0], "relu", |gv, x| if x > 0.0 { gv } else { 0.0 }).unwrap(),
                )]
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(
            out,
            vec![a],
            Box::new(|g, _, y, _| vec![Some(g.zip_map(y, "sigmoid", |gv, s| gv * s * (1.0 - s)).unwrap())]),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(
            out,
            vec![a],
            Box::new(|g, _, y, _| vec![Some(g.zip_map(y, "tanh", |gv, t| gv * (1.0 - t * t)).unwrap())]),
        )
    }

    /// Masked row softmax over the last axis.
    pub fn softmax(&mut self, x: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let out = tensor::softmax(self.value(x), mask.as_deref())?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(|g, _, y, _| {
                let k = y.last_dim();
                let mut d = vec![0.0; y.len()];
                for r in 0..y.leading() {
                    let yr = &y.data()[r * k..(r + 1) * k];
                    let gr = &g.data()[r * k..(r + 1) * k];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        d[r * k + j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![Some(Tensor::new(y.shape().to_vec(), d).unwrap())]
            }),
        ))
    }

    /// Masked mean over `axis`; the mask covers `shape[..=axis]`.
    pub fn mean_axis(&mut self, x: Var, axis: usize, mask: Option<Vec<bool>>) -> Result<Var> {
        let out = tensor::mean_over_axis(self.value(x), axis, mask.as_deref())?;
        let shape = self.value(x).shape().to_vec();
        let counts = tensor::pool_counts(&shape, axis, mask.as_deref())?;
        let (outer, len, inner) = split_axis(&shape, axis);
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |g, _, _, _| {
                let mut d = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let inv = 1.0 / counts[o] as f64;
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        if mask.as_ref().is_some_and(|m| !m[o * len + l]) {
                            continue;
                        }
                        let dst = &mut d[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (a, s) in dst.iter_mut().zip(src) {
                            *a = s * inv;
                        }
                    }
                }
                vec![Some(Tensor::new(shape.clone(), d).unwrap())]
            }),
        ))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
        let out = tensor::concat(&vals, axis)?;
        let sizes: Vec<usize> = vals.iter().map(|t| t.shape()[axis]).collect();
        Ok(self.push(
            out,
            xs.to_vec(),
            Box::new(move |g, _, _, need| {
                let mut start = 0;
                sizes
                    .iter()
                    .zip(need)
                    .map(|(&n, &want)| {
                        let piece = want.then(|| tensor::slice(g, axis, start, n).unwrap());
                        start += n;
                        piece
                    })
                    .collect()
            }),
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = tensor::slice(self.value(x), axis, start, len)?;
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |g, _, _, _| {
                let (outer, n, inner) = split_axis(&shape, axis);
                let mut d = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    d[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(Tensor::new(shape.clone(), d).unwrap())]
            }),
        ))
    }

    /// Picks rows of `x` viewed as `[rows × last_dim]`; output is
    /// `[idx.len() × last_dim]`. Repeated indices accumulate in backward.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let src = self.value(x);
        let (rows, c) = (src.leading(), src.last_dim());
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid("gather_rows", format!("row {bad} of {rows}")));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            data.extend_from_slice(src.row(i));
        }
        let out = Tensor::new(vec![idx.len(), c], data)?;
        let shape = src.shape().to_vec();
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |g, _, _, _| {
                let mut d = Tensor::zeros(&shape);
                let dd = d.data_mut();
                for (r, &i) in idx.iter().enumerate() {
                    for (a, b) in dd[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                        *a += b;
                    }
                }
                vec![Some(d)]
            }),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let orig = self.value(x).shape().to_vec();
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |g, _, _, _| vec![Some(g.reshape(&orig).unwrap())]),
        ))
    }

    /// Cosine similarity between row pairs of `x[rows × d]`; output `[pairs × 1]`.
    /// A pair with a zero-norm row has similarity 0 and no gradient.
    pub fn cosine_pairs(&mut self, x: Var, pairs: Vec<(usize, usize)>) -> Result<Var> {
        let src = self.value(x);
        let (rows, d) = (src.leading(), src.last_dim());
        let norms: Vec<f64> = (0..rows)
            .map(|r| src.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mut sims = Vec::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            if i >= rows || j >= rows {
                return Err(Error::invalid(
                    "cosine_pairs",
                    format!("pair ({i}, {j}) of {rows} rows"),
                ));
            }
            sims.push(match tensor::cosine_sim(src.row(i), src.row(j)) {
                Err(Error::ZeroNorm) => 0.0,
                other => other?,
            });
        }
        let n = pairs.len();
        let shape = src.shape().to_vec();
        Ok(self.push(
            Tensor::new(vec![n, 1], sims)?,
            vec![x],
            Box::new(move |g, p, y, _| {
                let x = p[0];
                let mut dx = Tensor::zeros(&shape);
                let dd = dx.data_mut();
                for (k, &(i, j)) in pairs.iter().enumerate() {
                    let (gi, c) = (g.data()[k], y.data()[k]);
                    let (a, b) = (x.row(i), x.row(j));
                    let (na, nb) = (norms[i], norms[j]);
                    if na == 0.0 || nb == 0.0 {
                        continue;
                    }
                    for t in 0..d {
                        dd[i * d + t] += gi * (b[t] / (na * nb) - c * a[t] / (na * na));
                        dd[j * d + t] += gi * (a[t] / (na * nb) - c * b[t] / (nb * nb));
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Mean over classes of the numerically stable logistic loss.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &Tensor) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != labels.shape() {
            return Err(Error::shape("bce_with_logits", z.shape(), labels.shape()));
        }
        let loss = crate::loss::bce_with_logits(z, labels)?;
        let labels = labels.clone();
        Ok(self.push(
            Tensor::scalar(loss),
            vec![logits],
            Box::new(move |g, p, _, _| {
                let k = labels.len() as f64;
                let scale = g.item() / k;
                vec![Some(
                    p[0].zip_map(&labels, "bce", |z, y| scale * (sigmoid(z) - y)).unwrap(),
                )]
            }),
        ))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Compares an analytic gradient against central differences.
///
/// `f` returns the scalar value and its analytic gradient at the given
/// point. The result is `max_i |a_i - n_i| / max(1, |a_i|, |n_i|)`.
pub fn grad_check<F>(mut f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    let (v0, analytic) = f(x)?;
    if !v0.is_finite() {
        return Err(Error::NonFinite(format!("grad_check base value {v0}")));
    }
    if analytic.shape() != x.shape() {
        return Err(Error::shape("grad_check", x.shape(), analytic.shape()));
    }
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (fp, _) = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let (fm, _) = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("grad_check probe at coordinate {i}")));
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
