//! Dense row-major `f64` tensors and the plain (untaped) kernels the
//! differentiable ops are built from.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Magic prefix of the binary tensor format.
pub const STG1_MAGIC: &[u8; 4] = b"STG1";

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Tensor {
            shape: vec![rows.len(), cols],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `[len / last_dim, last_dim]`.
    pub fn leading(&self) -> usize {
        match self.last_dim() {
            0 => 0,
            k => self.data.len() / k,
        }
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut o = 0;
        for (i, (&ix, &n)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < n, "index {ix} out of range for axis {i} of {:?}", self.shape);
            o = o * n + ix;
        }
        o
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let k = self.last_dim();
        &self.data[r * k..(r + 1) * k]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|x| x * c)
    }

    /// In-place `self += other`; shapes must match.
    pub fn accumulate(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "accumulate shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::invalid("transpose", format!("rank {} tensor", self.rank())));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    pub fn to_stg1_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + 8 * self.shape.len() + 8 * self.data.len());
        out.extend_from_slice(STG1_MAGIC);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_stg1_bytes(bytes: &[u8]) -> Result<Tensor> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("truncated STG1 header".into()))?;
        if &magic != STG1_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)
            .map_err(|_| Error::Format("missing rank byte".into()))?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let mut d = [0u8; 8];
            r.read_exact(&mut d)
                .map_err(|_| Error::Format("truncated dims".into()))?;
            shape.push(u64::from_le_bytes(d) as usize);
        }
        let n: usize = shape.iter().product();
        if r.len() != n * 8 {
            return Err(Error::Format(format!(
                "payload is {} bytes, expected {} for shape {shape:?}",
                r.len(),
                n * 8
            )));
        }
        let data = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_stg1_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        Tensor::from_stg1_bytes(&fs::read(path)?)
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) strides.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `c[m×n] = a[m×k] · b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::shape("matmul", &a.shape, &b.shape));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut c = vec![0.0; m * n];
    gemm_nn(&a.data, &b.data, &mut c, m, k, n);
    Ok(Tensor {
        shape: vec![m, n],
        data: c,
    })
}

/// `c += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c += a[k×m]ᵀ · b[k×n]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Affine map over the last axis: `y = x·W + b`, broadcast over leading axes.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 || x.last_dim() != w.shape[0] || x.rank() == 0 {
        return Err(Error::shape("linear", &x.shape, &w.shape));
    }
    let (p, q) = (w.shape[0], w.shape[1]);
    if b.shape != [q] {
        return Err(Error::shape("linear bias", &w.shape, &b.shape));
    }
    let m = x.leading();
    let mut out = Vec::with_capacity(m * q);
    for _ in 0..m {
        out.extend_from_slice(&b.data);
    }
    gemm_nn(&x.data, &w.data, &mut out, m, p, q);
    let mut shape = x.shape.clone();
    *shape.last_mut().unwrap() = q;
    Ok(Tensor { shape, data: out })
}

/// Row softmax over the last axis. Masked entries (`mask[i] == false`) are
/// treated as `-inf` and come out as exact zeros.
pub fn softmax(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    if let Some(m) = mask {
        if m.len() != x.len() {
            return Err(Error::shape("softmax mask", &x.shape, &[m.len()]));
        }
    }
    let k = x.last_dim();
    let mut out = vec![0.0; x.len()];
    for r in 0..x.leading() {
        let row = &x.data[r * k..(r + 1) * k];
        let keep = |j: usize| mask.is_none_or(|m| m[r * k + j]);
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if keep(j) {
                if v.is_nan() || v == f64::INFINITY {
                    return Err(Error::NonFinite(format!("softmax row {r}")));
                }
                max = max.max(v);
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateRow { row: r });
        }
        let orow = &mut out[r * k..(r + 1) * k];
        let mut total = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if keep(j) {
                let e = (v - max).exp();
                orow[j] = e;
                total += e;
            }
        }
        for v in orow.iter_mut() {
            *v /= total;
        }
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data: out,
    })
}

/// Counts of valid entries per (outer, inner-free) slice for masked pooling.
/// The mask covers `shape[..=axis]` and broadcasts over the trailing axes.
pub(crate) fn pool_counts(shape: &[usize], axis: usize, mask: Option<&[bool]>) -> Result<Vec<usize>> {
    let (outer, len, _) = split_axis(shape, axis);
    match mask {
        None => {
            if len == 0 {
                return Err(Error::DegeneratePool { slice: 0 });
            }
            Ok(vec![len; outer])
        }
        Some(m) => {
            if m.len() != outer * len {
                return Err(Error::shape("mean mask", shape, &[m.len()]));
            }
            let mut counts = Vec::with_capacity(outer);
            for o in 0..outer {
                let c = m[o * len..(o + 1) * len].iter().filter(|&&v| v).count();
                if c == 0 {
                    return Err(Error::DegeneratePool { slice: o });
                }
                counts.push(c);
            }
            Ok(counts)
        }
    }
}

/// Arithmetic mean over `axis`, counting only entries whose mask is set.
///
/// The mask has one flag per index of `shape[..=axis]` (so for a `T×N×d`
/// tensor pooled over axis 1 it is `T×N`).
pub fn mean_over_axis(x: &Tensor, axis: usize, mask: Option<&[bool]>) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::invalid(
            "mean_over_axis",
            format!("axis {axis} for shape {:?}", x.shape),
        ));
    }
    let counts = pool_counts(&x.shape, axis, mask)?;
    let (outer, len, inner) = split_axis(&x.shape, axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        let acc = &mut out[o * inner..(o + 1) * inner];
        for l in 0..len {
            if mask.is_some_and(|m| !m[o * len + l]) {
                continue;
            }
            let src = &x.data[(o * len + l) * inner..(o * len + l + 1) * inner];
            for (a, s) in acc.iter_mut().zip(src) {
                *a += s;
            }
        }
        let inv = 1.0 / counts[o] as f64;
        for a in acc.iter_mut() {
            *a *= inv;
        }
    }
    let mut shape = x.shape.clone();
    shape.remove(axis);
    Ok(Tensor { shape, data: out })
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Concatenates along `axis`; every other axis must agree.
pub fn concat(xs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = xs.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
    if axis >= first.rank() {
        return Err(Error::invalid(
            "concat",
            format!("axis {axis} for shape {:?}", first.shape),
        ));
    }
    for x in &xs[1..] {
        let ok = x.rank() == first.rank()
            && x.shape
                .iter()
                .zip(&first.shape)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape("concat", &first.shape, &x.shape));
        }
    }
    let (outer, _, inner) = split_axis(&first.shape, axis);
    let total: usize = xs.iter().map(|x| x.shape[axis]).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for x in xs {
            let span = x.shape[axis] * inner;
            data.extend_from_slice(&x.data[o * span..(o + 1) * span]);
        }
    }
    let mut shape = first.shape.clone();
    shape[axis] = total;
    Ok(Tensor { shape, data })
}

/// Takes `len` entries starting at `start` along `axis`.
pub fn slice(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    if axis >= x.rank() || start + len > x.shape[axis] {
        return Err(Error::invalid(
            "slice",
            format!("[{start}, {}) on axis {axis} of {:?}", start + len, x.shape),
        ));
    }
    let (outer, n, inner) = split_axis(&x.shape, axis);
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        data.extend_from_slice(&x.data[base..base + len * inner]);
    }
    let mut shape = x.shape.clone();
    shape[axis] = len;
    Ok(Tensor { shape, data })
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_sim", &[a.len()], &[b.len()]));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
