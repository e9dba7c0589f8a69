//! Independent scalar reference implementations and random fixtures shared
//! by the integration tests. Everything here works on plain `Vec<f64>`
//! loops and never calls the library's kernels.

#![allow(dead_code)]

use rand::Rng;
use stag_core::autodiff::{Tape, Var};
use stag_core::geometry::{BBox, FeatureMap};
use stag_core::model::{Architecture, EdgeMode, Hierarchy, InitOptions, ModelDims, StagParams, TemporalAggregator};
use stag_core::rng::{rng, StagRng};
use stag_core::segment::{Frame, VideoSegment};
use stag_core::tensor::Tensor;

pub type Rows = Vec<Vec<f64>>;

// ---------------------------------------------------------------- fixtures

pub fn seeded(seed: u64) -> StagRng {
    rng(seed)
}

pub fn random_tensor(r: &mut StagRng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

/// A box with positive area inside `[0, w] × [0, h]`.
pub fn random_box(r: &mut StagRng, w: f64, h: f64) -> BBox {
    let bw = r.random_range(f64::min(1.0, 0.3 * w)..w * 0.6);
    let bh = r.random_range(f64::min(1.0, 0.3 * h)..h * 0.6);
    let x1 = r.random_range(0.0..w - bw);
    let y1 = r.random_range(0.0..h - bh);
    BBox::new(x1, y1, x1 + bw, y1 + bh)
}

/// A segment with `t` frames of `n` slots; each frame has at least one box
/// and every slot is independently empty with probability `hole`.
pub fn random_segment(
    r: &mut StagRng,
    t: usize,
    n: usize,
    channels: usize,
    map_hw: usize,
    stride: f64,
    hole: f64,
) -> VideoSegment {
    let side = map_hw as f64 * stride;
    let frames = (0..t)
        .map(|_| {
            let map = FeatureMap::new(random_tensor(r, &[channels, map_hw, map_hw], 1.0), stride).unwrap();
            let mut boxes: Vec<Option<BBox>> = (0..n)
                .map(|_| (!r.random_bool(hole)).then(|| random_box(r, side, side)))
                .collect();
            if boxes.iter().all(Option::is_none) {
                let i = r.random_range(0..n);
                boxes[i] = Some(random_box(r, side, side));
            }
            Frame { map, boxes }
        })
        .collect();
    VideoSegment {
        segment_id: "fixture".into(),
        seed: 0,
        frames,
        labels: vec![if r.random_bool(0.5) { 1.0 } else { 0.0 }],
    }
}

/// Parameters with every tensor random, including biases and the non-local
/// output projections, so no path is an exact pass-through.
pub fn random_params(dims: ModelDims, seed: u64) -> StagParams {
    let mut p = StagParams::init(
        dims,
        seed,
        InitOptions {
            identity_nonlocal: false,
        },
    )
    .unwrap();
    let mut r = seeded(seed ^ 0x5eed);
    for (_, param) in p.named_mut() {
        let shape = param.value.shape().to_vec();
        param.value = random_tensor(&mut r, &shape, 0.4);
    }
    p
}

/// Scalar `Σ out ⊙ probe` recorded on the tape, for checking ops with
/// non-scalar outputs.
pub fn probe_sum(tape: &mut Tape, out: Var, probe: &Tensor) -> Var {
    let len = tape.value(out).len();
    let flat = tape.reshape(out, &[1, len]).unwrap();
    let col = tape.constant(probe.reshape(&[len, 1]).unwrap());
    tape.matmul(flat, col).unwrap()
}

// ---------------------------------------------------------------- linear algebra

pub fn rows(t: &Tensor) -> Rows {
    assert_eq!(t.rank(), 2);
    let c = t.shape()[1];
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x · W + b` with `W` stored `p×q`.
pub fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (p, q) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), p);
    (0..q)
        .map(|j| b.data()[j] + (0..p).map(|i| x[i] * w.data()[i * q + j]).sum::<f64>())
        .collect()
}

pub fn vec_mat(x: &[f64], w: &Tensor) -> Vec<f64> {
    affine(x, w, &Tensor::zeros(&[w.shape()[1]]))
}

pub fn mean_rows(xs: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; xs[0].len()];
    for x in xs {
        for (a, v) in acc.iter_mut().zip(x) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / xs.len() as f64).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------- attention

/// Pairwise two-loop non-local block: returns outputs and the `k×k`
/// attention (zero rows for invalid items).
pub fn non_local_oracle(
    theta: &Tensor,
    phi: &Tensor,
    g: &Tensor,
    out: &Tensor,
    residual: bool,
    items: &[Vec<f64>],
    valid: &[bool],
) -> (Rows, Rows) {
    let k = items.len();
    let d_k = theta.shape()[1] as f64;
    let mut outputs = Vec::with_capacity(k);
    let mut attn = vec![vec![0.0; k]; k];
    for i in 0..k {
        if !valid[i] {
            outputs.push(items[i].clone());
            continue;
        }
        let qi = vec_mat(&items[i], theta);
        let scores: Vec<Option<f64>> = (0..k)
            .map(|j| valid[j].then(|| dot(&qi, &vec_mat(&items[j], phi)) / d_k.sqrt()))
            .collect();
        let top = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().flatten().map(|s| (s - top).exp()).sum();
        let mut mixed = vec![0.0; items[i].len()];
        for j in 0..k {
            if let Some(s) = scores[j] {
                let a = (s - top).exp() / z;
                attn[i][j] = a;
                for (m, v) in mixed.iter_mut().zip(vec_mat(&items[j], g)) {
                    *m += a * v;
                }
            }
        }
        let mut o = vec_mat(&mixed, out);
        if residual {
            for (a, v) in o.iter_mut().zip(&items[i]) {
                *a += v;
            }
        }
        outputs.push(o);
    }
    (outputs, attn)
}

// ---------------------------------------------------------------- geometry

/// Direct bilinear sample in map coordinates with the half-cell center
/// convention, clamped to the grid.
fn bilinear(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let gx = (x - 0.5).max(0.0).min((w - 1) as f64);
    let gy = (y - 0.5).max(0.0).min((h - 1) as f64);
    let x0 = gx.floor() as usize;
    let y0 = gy.floor() as usize;
    let x1 = if x0 + 1 < w { x0 + 1 } else { x0 };
    let y1 = if y0 + 1 < h { y0 + 1 } else { y0 };
    let fx = gx - x0 as f64;
    let fy = gy - y0 as f64;
    let at = |yy: usize, xx: usize| plane[yy * w + xx];
    let top = at(y0, x0) + fx * (at(y0, x1) - at(y0, x0));
    let bottom = at(y1, x0) + fx * (at(y1, x1) - at(y1, x0));
    top + fy * (bottom - top)
}

/// RoIAlign of one box: 7×7 bins, 2×2 samples per bin, box clipped to the
/// map extent first. Output flattened `C×7×7`. `None` for a zero-area clip.
pub fn roi_align_oracle(map: &FeatureMap, b: &BBox) -> Option<Vec<f64>> {
    const OUT: usize = 7;
    const S: usize = 2;
    let (c, h, w) = (map.channels(), map.height(), map.width());
    let s = map.stride;
    let x1 = b.x1.max(0.0);
    let y1 = b.y1.max(0.0);
    let x2 = b.x2.min(w as f64 * s);
    let y2 = b.y2.min(h as f64 * s);
    if x2 <= x1 || y2 <= y1 {
        return None;
    }
    let bin_w = (x2 - x1) / s / OUT as f64;
    let bin_h = (y2 - y1) / s / OUT as f64;
    let mut out = Vec::with_capacity(c * OUT * OUT);
    for ch in 0..c {
        let plane = &map.data.data()[ch * h * w..(ch + 1) * h * w];
        for ph in 0..OUT {
            for pw in 0..OUT {
                let mut acc = 0.0;
                for iy in 0..S {
                    for ix in 0..S {
                        let y = y1 / s + bin_h * (ph as f64 + (iy as f64 + 0.5) / S as f64);
                        let x = x1 / s + bin_w * (pw as f64 + (ix as f64 + 0.5) / S as f64);
                        acc += bilinear(plane, h, w, x, y);
                    }
                }
                out.push(acc / (S * S) as f64);
            }
        }
    }
    Some(out)
}

pub fn iou_oracle(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// O(n²) greedy suppression: sort, then strike out every later box that
/// overlaps a survivor beyond the threshold.
pub fn nms_oracle(boxes: &[BBox], threshold: f64, keep_top: usize) -> Vec<BBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.partial_cmp(&boxes[a].score).unwrap().then(a.cmp(&b)));
    let mut alive = vec![true; order.len()];
    let mut kept = Vec::new();
    for p in 0..order.len() {
        if !alive[p] {
            continue;
        }
        kept.push(boxes[order[p]]);
        for q in p + 1..order.len() {
            if iou_oracle(&boxes[order[p]], &boxes[order[q]]) > threshold {
                alive[q] = false;
            }
        }
    }
    kept.truncate(keep_top);
    kept
}

// ---------------------------------------------------------------- metrics and recurrence

/// AP by explicit ranks: rank of item p counts items scoring higher, or
/// equal with a lower index.
pub fn ap_oracle(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let rank = |p: usize| {
        1 + (0..scores.len())
            .filter(|&q| scores[q] > scores[p] || (scores[q] == scores[p] && q < p))
            .count()
    };
    let positives: Vec<usize> = (0..scores.len()).filter(|&p| labels[p]).collect();
    if positives.is_empty() {
        return None;
    }
    let total: f64 = positives
        .iter()
        .map(|&p| {
            let r = rank(p);
            let hits = positives.iter().filter(|&&q| rank(q) <= r).count();
            hits as f64 / r as f64
        })
        .sum();
    Some(total / positives.len() as f64)
}

/// Step-by-step LSTM from a zero state, gates packed `[i | f | g | o]`.
pub fn lstm_oracle(xs: &[Vec<f64>], w_x: &Tensor, w_h: &Tensor, b: &Tensor) -> Vec<f64> {
    let hidden = w_h.shape()[0];
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    for x in xs {
        let pre: Vec<f64> = affine(x, w_x, b)
            .iter()
            .zip(vec_mat(&h, w_h))
            .map(|(a, b)| a + b)
            .collect();
        for u in 0..hidden {
            let i = sigmoid(pre[u]);
            let f = sigmoid(pre[hidden + u]);
            let g = pre[2 * hidden + u].tanh();
            let o = sigmoid(pre[3 * hidden + u]);
            c[u] = f * c[u] + i * g;
            h[u] = o * c[u].tanh();
        }
    }
    h
}

// ---------------------------------------------------------------- heatmaps

/// Incoming attention per box from one frame's `N²×N²` relation attention.
pub fn box_mass_oracle(frame: &[Vec<f64>], n: usize, valid: &[bool]) -> Vec<f64> {
    let mut mass = vec![0.0; n];
    for i in 0..n {
        if !valid[i] {
            continue;
        }
        for row in frame {
            for j in 0..n {
                if j == i {
                    mass[i] += row[i * n + i];
                } else {
                    mass[i] += row[i * n + j] + row[j * n + i];
                }
            }
        }
    }
    mass
}

/// Per-pixel Gaussian sum, scaled so the brightest pixel is 255.
pub fn heatmap_oracle(boxes: &[Option<BBox>], mass: &[f64], width: usize, height: usize) -> Vec<u8> {
    let mut field = vec![0.0; width * height];
    for (py, row) in field.chunks_mut(width).enumerate() {
        for (px, v) in row.iter_mut().enumerate() {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            for (b, m) in boxes.iter().zip(mass) {
                let Some(b) = b else { continue };
                let sigma = f64::max(1.0, 0.25 * f64::min(b.x2 - b.x1, b.y2 - b.y1));
                let (cx, cy) = ((b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0);
                *v += m * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let peak = field.iter().copied().fold(0.0, f64::max);
    let mut pgm = format!("P5\n{width} {height}\n255\n").into_bytes();
    pgm.extend(field.iter().map(|v| {
        if peak > 0.0 {
            (v / peak * 255.0).round() as u8
        } else {
            0
        }
    }));
    pgm
}

// ---------------------------------------------------------------- whole model

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let norms = dot(a, a).sqrt() * dot(b, b).sqrt();
    if norms == 0.0 {
        return 0.0;
    }
    dot(a, b) / norms
}

/// Straight-line forward pass over plain vectors. Returns the logits.
pub fn forward_oracle(segment: &VideoSegment, p: &StagParams, arch: Architecture) -> Vec<f64> {
    let n = p.dims.n;
    let nl = |block: &stag_core::model::NonLocalBlock, items: &[Vec<f64>]| {
        non_local_oracle(
            &block.theta.value,
            &block.phi.value,
            &block.g.value,
            &block.out.value,
            block.use_residual,
            items,
            &vec![true; items.len()],
        )
        .0
    };
    let temporal = |frames: &[Vec<f64>], agg: TemporalAggregator| match agg {
        TemporalAggregator::NonLocal => mean_rows(&nl(&p.temporal_nl, frames)),
        TemporalAggregator::Mean => mean_rows(frames),
        TemporalAggregator::Lstm => lstm_oracle(frames, &p.lstm.w_x.value, &p.lstm.w_h.value, &p.lstm.b.value),
    };

    let mut node_frames = Vec::new();
    let mut relation_frames: Vec<Rows> = Vec::new();
    for frame in &segment.frames {
        let slots: Vec<(usize, BBox)> = frame
            .boxes
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.map(|b| (i, b)))
            .collect();
        assert!(slots.len() <= n);
        let node: Vec<Vec<f64>> = slots
            .iter()
            .map(|(_, b)| {
                affine(
                    &roi_align_oracle(&frame.map, b).unwrap(),
                    &p.node_embed.w.value,
                    &p.node_embed.b.value,
                )
            })
            .collect();
        node_frames.push(node.clone());
        let mut relations = Vec::new();
        for (a, (_, ba)) in slots.iter().enumerate() {
            for (c, (_, bc)) in slots.iter().enumerate() {
                let edge = match arch {
                    Architecture::Graph(v) => match v.edge_mode {
                        EdgeMode::UnionRoi => {
                            let u = BBox::new(ba.x1.min(bc.x1), ba.y1.min(bc.y1), ba.x2.max(bc.x2), ba.y2.max(bc.y2));
                            affine(
                                &roi_align_oracle(&frame.map, &u).unwrap(),
                                &p.edge_embed.w.value,
                                &p.edge_embed.b.value,
                            )
                        }
                        EdgeMode::NodeConcat => p.edge_embed.b.value.data().to_vec(),
                        EdgeMode::CosineSim => affine(
                            &[cosine(&node[a], &node[c])],
                            &p.sim_embed.w.value,
                            &p.sim_embed.b.value,
                        ),
                    },
                    Architecture::NodeOnly { .. } => continue,
                };
                let cat: Vec<f64> = node[a].iter().chain(&edge).chain(&node[c]).copied().collect();
                let agg = affine(&cat, &p.pair_aggregate.w.value, &p.pair_aggregate.b.value);
                relations.push(agg.into_iter().map(|v| v.max(0.0)).collect());
            }
        }
        relation_frames.push(relations);
    }

    let video = match arch {
        Architecture::NodeOnly { temporal_aggregator } => {
            let frames: Rows = node_frames.iter().map(|f| mean_rows(f)).collect();
            temporal(&frames, temporal_aggregator)
        }
        Architecture::Graph(v) => {
            let spatial = || -> Rows {
                relation_frames
                    .iter()
                    .map(|r| mean_rows(&nl(&p.spatial_nl, r)))
                    .collect()
            };
            let pooled = || -> Rows { relation_frames.iter().map(|r| mean_rows(r)).collect() };
            match v.hierarchy {
                Hierarchy::SpaceAndTime => temporal(&spatial(), v.temporal_aggregator),
                Hierarchy::SpaceOnly => mean_rows(&spatial()),
                Hierarchy::TimeOnly => temporal(&pooled(), v.temporal_aggregator),
                Hierarchy::None => mean_rows(&relation_frames.concat()),
            }
        }
    };
    affine(&video, &p.classifier.w.value, &p.classifier.b.value)
}

// ---------------------------------------------------------------- invariance

/// Every grid variant, the LSTM and mean temporal variants, and the three
/// node-only paths.
pub fn all_architectures() -> Vec<Architecture> {
    use stag_core::model::VariantConfig;
    let mut archs: Vec<Architecture> = VariantConfig::grid().into_iter().map(Architecture::Graph).collect();
    for agg in [TemporalAggregator::Lstm, TemporalAggregator::Mean] {
        archs.push(Architecture::Graph(VariantConfig::new(
            EdgeMode::UnionRoi,
            Hierarchy::SpaceAndTime,
            agg,
        )));
        archs.push(Architecture::Graph(VariantConfig::new(
            EdgeMode::CosineSim,
            Hierarchy::TimeOnly,
            agg,
        )));
    }
    for agg in [
        TemporalAggregator::Lstm,
        TemporalAggregator::NonLocal,
        TemporalAggregator::Mean,
    ] {
        archs.push(Architecture::NodeOnly {
            temporal_aggregator: agg,
        });
    }
    archs
}

/// Logits, per-frame features, video feature and attention of one pass.
pub struct Outputs {
    pub logits: Tensor,
    pub frame_feats: Option<Tensor>,
    pub video_feat: Tensor,
    pub attention: stag_core::model::AttentionRecord,
}

pub fn outputs(seg: &VideoSegment, params: &StagParams, arch: Architecture) -> Outputs {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = stag_core::model::run_taped(&mut tape, seg, params, &vars, arch, false).unwrap();
    Outputs {
        logits: tape.value(out.logits).clone(),
        frame_feats: out.frame_feats.map(|v| tape.value(v).clone()),
        video_feat: tape.value(out.video_feat).clone(),
        attention: out.attention,
    }
}

fn shuffled(r: &mut StagRng, k: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..k).collect();
    while k > 1 && p.iter().enumerate().all(|(i, &v)| i == v) {
        p.shuffle(r);
    }
    p
}

fn invariance_fixture(r: &mut StagRng, trial: u64) -> (VideoSegment, StagParams) {
    let t = r.random_range(2..5);
    let n = r.random_range(2..5);
    let seg = random_segment(r, t, n, 2, 6, 2.0, 0.3);
    let dims = ModelDims {
        channels: 2,
        d: 6,
        d_k: 3,
        n,
        t,
        num_classes: 1,
    };
    (seg, random_params(dims, trial))
}

/// Largest change in logits or frame features over all architectures when
/// box slots are permuted within every frame.
pub fn box_permutation_error(r: &mut StagRng, trial: u64) -> f64 {
    let (seg, params) = invariance_fixture(r, trial);
    let mut moved = seg.clone();
    for f in &mut moved.frames {
        let p = shuffled(r, f.boxes.len());
        f.boxes = p.iter().map(|&i| f.boxes[i]).collect();
    }
    let mut worst: f64 = 0.0;
    for arch in all_architectures() {
        let (a, b) = (outputs(&seg, &params, arch), outputs(&moved, &params, arch));
        worst = worst.max(a.logits.max_abs_diff(&b.logits));
        if let (Some(x), Some(y)) = (&a.frame_feats, &b.frame_feats) {
            worst = worst.max(x.max_abs_diff(y));
        }
    }
    worst
}

/// Largest change in the video feature and logits when frames are permuted,
/// over every architecture whose temporal reduction is order-free.
pub fn frame_permutation_error(r: &mut StagRng, trial: u64) -> f64 {
    let (seg, params) = invariance_fixture(r, trial);
    let moved = permute_frames(r, &seg);
    let mut worst: f64 = 0.0;
    for arch in all_architectures() {
        let order_free = match arch {
            Architecture::Graph(v) => {
                v.temporal_aggregator != TemporalAggregator::Lstm
                    || matches!(v.hierarchy, Hierarchy::SpaceOnly | Hierarchy::None)
            }
            Architecture::NodeOnly { temporal_aggregator } => temporal_aggregator != TemporalAggregator::Lstm,
        };
        if !order_free {
            continue;
        }
        let (a, b) = (outputs(&seg, &params, arch), outputs(&moved, &params, arch));
        worst = worst
            .max(a.logits.max_abs_diff(&b.logits))
            .max(a.video_feat.max_abs_diff(&b.video_feat));
    }
    worst
}

fn permute_frames(r: &mut StagRng, seg: &VideoSegment) -> VideoSegment {
    let p = shuffled(r, seg.frames.len());
    let mut moved = seg.clone();
    moved.frames = p.iter().map(|&i| seg.frames[i].clone()).collect();
    moved
}

/// Change in the LSTM graph model's video feature under a frame permutation.
pub fn lstm_frame_permutation_change(r: &mut StagRng, trial: u64) -> f64 {
    let (seg, params) = invariance_fixture(r, trial);
    let moved = permute_frames(r, &seg);
    let arch = Architecture::Graph(stag_core::model::VariantConfig::new(
        EdgeMode::UnionRoi,
        Hierarchy::SpaceAndTime,
        TemporalAggregator::Lstm,
    ));
    outputs(&seg, &params, arch)
        .video_feat
        .max_abs_diff(&outputs(&moved, &params, arch).video_feat)
}

/// Largest output change from appending two empty slots to every frame.
pub fn mask_padding_error(r: &mut StagRng, trial: u64) -> f64 {
    let (seg, params) = invariance_fixture(r, trial);
    let mut padded = seg.clone();
    let n = params.dims.n;
    for f in &mut padded.frames {
        f.boxes.resize(n, None);
        f.boxes.extend([None, None]);
    }
    let mut wide = params.clone();
    wide.dims.n = n + 2;
    let mut worst: f64 = 0.0;
    for arch in all_architectures() {
        let (a, b) = (outputs(&seg, &params, arch), outputs(&padded, &wide, arch));
        worst = worst
            .max(a.logits.max_abs_diff(&b.logits))
            .max(a.video_feat.max_abs_diff(&b.video_feat));
        if let (Some(x), Some(y)) = (&a.frame_feats, &b.frame_feats) {
            worst = worst.max(x.max_abs_diff(y));
        }
    }
    worst
}

/// Largest deviation from 1 of any valid attention row's sum, with invalid
/// rows required to be all zero (reported as their absolute sum).
pub fn attention_row_error(r: &mut StagRng, trial: u64) -> f64 {
    let (seg, params) = invariance_fixture(r, trial);
    let n = params.dims.n;
    let nn = n * n;
    let mut worst: f64 = 0.0;
    for arch in all_architectures() {
        let rec = outputs(&seg, &params, arch).attention;
        if let Some(s) = &rec.spatial {
            for (idx, row) in s.data().chunks(nn).enumerate() {
                let (t, p) = (idx / nn, idx % nn);
                let valid = rec.mask[t * n + p / n] && rec.mask[t * n + p % n];
                let sum: f64 = row.iter().sum();
                worst = worst.max(if valid {
                    (sum - 1.0).abs()
                } else {
                    row.iter().map(|v| v.abs()).sum()
                });
                for (q, v) in row.iter().enumerate() {
                    if !(rec.mask[t * n + q / n] && rec.mask[t * n + q % n]) {
                        worst = worst.max(v.abs());
                    }
                }
            }
        }
        if let Some(tm) = &rec.temporal {
            for row in tm.data().chunks(rec.t) {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    worst
}
