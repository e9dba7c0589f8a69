//! Box algebra and bilinear region pooling over feature maps.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Axis-aligned box in frame pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox {
            x1,
            y1,
            x2,
            y2,
            score: 1.0,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite()) && self.x1 <= self.x2 && self.y1 <= self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Greedy non-maximum suppression.
///
/// Boxes are visited in descending score order (ties by original index); a
/// box is dropped if its IoU with any survivor exceeds `iou_threshold`.
pub fn nms(boxes: &[BBox], iou_threshold: f64, keep_top: usize) -> Result<Vec<BBox>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::invalid(
            "nms",
            format!("iou_threshold {iou_threshold} outside (0, 1]"),
        ));
    }
    if keep_top == 0 {
        return Err(Error::invalid("nms", "keep_top must be at least 1"));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| boxes[j].score.total_cmp(&boxes[i].score).then(i.cmp(&j)));
    let mut kept: Vec<BBox> = Vec::new();
    for i in order {
        if kept.len() == keep_top {
            break;
        }
        if kept.iter().all(|k| iou(k, &boxes[i]) <= iou_threshold) {
            kept.push(boxes[i]);
        }
    }
    Ok(kept)
}

/// Smallest box containing both inputs.
pub fn union_box(a: &BBox, b: &BBox) -> BBox {
    BBox::new(a.x1.min(b.x1), a.y1.min(b.y1), a.x2.max(b.x2), a.y2.max(b.y2))
}

/// A `C×H×W` feature grid and the pixel size of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub data: Tensor,
    pub stride: f64,
}

impl FeatureMap {
    pub fn new(data: Tensor, stride: f64) -> Result<Self> {
        let s = data.shape();
        if s.len() != 3 || s.contains(&0) {
            return Err(Error::invalid(
                "feature map",
                format!("shape {s:?} is not C×H×W with C,H,W ≥ 1"),
            ));
        }
        if !(stride > 0.0 && stride.is_finite()) {
            return Err(Error::invalid("feature map", format!("stride {stride}")));
        }
        Ok(FeatureMap { data, stride })
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// Pixel extent covered by the map.
    pub fn extent(&self) -> BBox {
        BBox::new(
            0.0,
            0.0,
            self.width() as f64 * self.stride,
            self.height() as f64 * self.stride,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoiAlignConfig {
    pub out_h: usize,
    pub out_w: usize,
    pub samples_per_bin: usize,
}

impl Default for RoiAlignConfig {
    fn default() -> Self {
        RoiAlignConfig {
            out_h: 7,
            out_w: 7,
            samples_per_bin: 2,
        }
    }
}

impl RoiAlignConfig {
    pub fn cells(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Bilinear weights of one continuous sample in map coordinates.
///
/// Cell `(h, w)` has its center at `(w + 0.5, h + 0.5)`, so the sample is
/// shifted by half a cell before interpolation and then clamped to the grid.
pub fn bilinear_taps(x: f64, y: f64, height: usize, width: usize) -> [(usize, f64); 4] {
    let gx = (x - 0.5).clamp(0.0, (width - 1) as f64);
    let gy = (y - 0.5).clamp(0.0, (height - 1) as f64);
    let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
    let (lx, ly) = (gx - x0 as f64, gy - y0 as f64);
    [
        (y0 * width + x0, (1.0 - ly) * (1.0 - lx)),
        (y0 * width + x1, (1.0 - ly) * lx),
        (y1 * width + x0, ly * (1.0 - lx)),
        (y1 * width + x1, ly * lx),
    ]
}

/// Sparse linear operator taking a map's spatial plane to pooled cells for a
/// batch of boxes. The same weights apply to every channel.
#[derive(Clone, Debug)]
pub struct RoiPlan {
    channels: usize,
    plane: usize,
    cells: usize,
    /// `taps[roi * cells + cell]` lists `(spatial index, weight)`.
    taps: Vec<Vec<(usize, f64)>>,
}

impl RoiPlan {
    pub fn new(map: &FeatureMap, boxes: &[BBox], cfg: RoiAlignConfig) -> Result<Self> {
        if cfg.out_h == 0 || cfg.out_w == 0 || cfg.samples_per_bin == 0 {
            return Err(Error::invalid("roi_align", format!("{cfg:?}")));
        }
        let (h, w) = (map.height(), map.width());
        let ext = map.extent();
        let s = cfg.samples_per_bin;
        let norm = 1.0 / (s * s) as f64;
        let mut taps = Vec::with_capacity(boxes.len() * cfg.cells());
        for b in boxes {
            if !b.is_valid() {
                return Err(Error::DegenerateRoi(b.coords()));
            }
            let c = BBox::new(b.x1.max(ext.x1), b.y1.max(ext.y1), b.x2.min(ext.x2), b.y2.min(ext.y2));
            if !(c.x2 > c.x1 && c.y2 > c.y1) {
                return Err(Error::DegenerateRoi(b.coords()));
            }
            let (bx, by) = (c.x1 / map.stride, c.y1 / map.stride);
            let bin_w = c.width() / map.stride / cfg.out_w as f64;
            let bin_h = c.height() / map.stride / cfg.out_h as f64;
            for ph in 0..cfg.out_h {
                for pw in 0..cfg.out_w {
                    let mut cell = Vec::with_capacity(4 * s * s);
                    for iy in 0..s {
                        let y = by + (ph as f64 + (iy as f64 + 0.5) / s as f64) * bin_h;
                        for ix in 0..s {
                            let x = bx + (pw as f64 + (ix as f64 + 0.5) / s as f64) * bin_w;
                            for (idx, wt) in bilinear_taps(x, y, h, w) {
                                if wt != 0.0 {
                                    cell.push((idx, wt * norm));
                                }
                            }
                        }
                    }
                    taps.push(cell);
                }
            }
        }
        Ok(RoiPlan {
            channels: map.channels(),
            plane: h * w,
            cells: cfg.cells(),
            taps,
        })
    }

    pub fn num_rois(&self) -> usize {
        self.taps.len() / self.cells
    }

    /// Width of one pooled row: `C · out_h · out_w`.
    pub fn row_len(&self) -> usize {
        self.channels * self.cells
    }

    /// Pools `map_data` (`C×H×W`) into `[rois × C·out_h·out_w]`.
    pub fn apply(&self, map_data: &[f64]) -> Tensor {
        let k = self.num_rois();
        let row = self.row_len();
        let mut out = vec![0.0; k * row];
        for r in 0..k {
            for c in 0..self.channels {
                let plane = &map_data[c * self.plane..(c + 1) * self.plane];
                for cell in 0..self.cells {
                    out[r * row + c * self.cells + cell] = self.taps[r * self.cells + cell]
                        .iter()
                        .map(|&(i, wt)| wt * plane[i])
                        .sum();
                }
            }
        }
        Tensor::new(vec![k, row], out).unwrap()
    }

    /// Adjoint of [`RoiPlan::apply`].
    pub fn apply_transpose(&self, grad: &[f64], map_shape: &[usize]) -> Tensor {
        let mut d = Tensor::zeros(map_shape);
        let dd = d.data_mut();
        let row = self.row_len();
        for r in 0..self.num_rois() {
            for c in 0..self.channels {
                let plane = &mut dd[c * self.plane..(c + 1) * self.plane];
                for cell in 0..self.cells {
                    let g = grad[r * row + c * self.cells + cell];
                    if g == 0.0 {
                        continue;
                    }
                    for &(i, wt) in &self.taps[r * self.cells + cell] {
                        plane[i] += g * wt;
                    }
                }
            }
        }
        d
    }
}

/// Bilinear RoIAlign of one box; output is `C×out_h×out_w`.
pub fn roi_align(map: &FeatureMap, b: &BBox, cfg: RoiAlignConfig) -> Result<Tensor> {
    let plan = RoiPlan::new(map, std::slice::from_ref(b), cfg)?;
    plan.apply(map.data.data())
        .reshape(&[map.channels(), cfg.out_h, cfg.out_w])
}

/// Differentiable RoIAlign of a batch of boxes over a taped map
/// (`C×H×W`). Output rows are the flattened `C×out_h×out_w` grids.
pub fn roi_align_taped(tape: &mut Tape, map: Var, stride: f64, boxes: &[BBox], cfg: RoiAlignConfig) -> Result<Var> {
    let fm = FeatureMap::new(tape.value(map).clone(), stride)?;
    let plan = Arc::new(RoiPlan::new(&fm, boxes, cfg)?);
    let out = plan.apply(fm.data.data());
    let shape = fm.data.shape().to_vec();
    Ok(tape.push(
        out,
        vec![map],
        Box::new(move |g, _, _, _| vec![Some(plan.apply_transpose(g.data(), &shape))]),
    ))
}
