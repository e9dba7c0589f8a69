use serde_json::{json, Value};

use crate::tensor::Tensor;

/// Attention weights produced by one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub t: usize,
    pub n: usize,
    /// `T·N` slot validity.
    pub mask: Vec<bool>,
    /// `[T×N²×N²]`: row `(i, j)` holds the weights relation `(i, j)` puts on
    /// every relation of the same frame. Absent when the variant has no
    /// spatial attention.
    pub spatial: Option<Tensor>,
    /// `[T×T]` frame attention; absent unless the temporal stage is non-local.
    pub temporal: Option<Tensor>,
}

impl AttentionRecord {
    /// Incoming spatial attention mass per box slot of frame `t`.
    ///
    /// Column sums give each relation's incoming mass; a box collects the
    /// mass of every relation it takes part in (the self-relation `(b, b)`
    /// counted once). Masked slots get 0. `None` without spatial attention.
    pub fn box_mass(&self, t: usize) -> Option<Vec<f64>> {
        let spatial = self.spatial.as_ref()?;
        let (n, nn) = (self.n, self.n * self.n);
        let frame = &spatial.data()[t * nn * nn..(t + 1) * nn * nn];
        let mut incoming = vec![0.0; nn];
        for row in frame.chunks_exact(nn) {
            for (acc, v) in incoming.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let mut mass = vec![0.0; n];
        for (p, &m) in incoming.iter().enumerate() {
            let (i, j) = (p / n, p % n);
            mass[i] += m;
            if j != i {
                mass[j] += m;
            }
        }
        for (i, m) in mass.iter_mut().enumerate() {
            if !self.mask[t * n + i] {
                *m = 0.0;
            }
        }
        Some(mass)
    }

    /// Slot with the largest incoming mass (lowest index on ties).
    pub fn top_box(&self, t: usize) -> Option<usize> {
        let mass = self.box_mass(t)?;
        (0..self.n)
            .filter(|&i| self.mask[t * self.n + i])
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if mass[b] >= mass[i] => Some(b),
                _ => Some(i),
            })
    }

    pub fn to_json(&self) -> Value {
        let mask: Vec<Vec<bool>> = self.mask.chunks(self.n.max(1)).map(<[bool]>::to_vec).collect();
        let nn = self.n * self.n;
        let spatial = self.spatial.as_ref().map(|s| {
            s.data()
                .chunks(nn * nn)
                .map(|f| f.chunks(nn).map(<[f64]>::to_vec).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        });
        let temporal = self
            .temporal
            .as_ref()
            .map(|a| a.data().chunks(self.t).map(<[f64]>::to_vec).collect::<Vec<_>>());
        let (mass, top): (Vec<_>, Vec<_>) = (0..self.t).map(|t| (self.box_mass(t), self.top_box(t))).unzip();
        json!({
            "t": self.t,
            "n": self.n,
            "mask": mask,
            "spatial": spatial,
            "temporal": temporal,
            "box_mass": mass,
            "top_box": top,
        })
    }
}
