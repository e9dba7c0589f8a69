use super::{EdgeMode, ModelDims, ParamVars};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{roi_align_taped, union_box, BBox, RoiAlignConfig};
use crate::segment::VideoSegment;
use crate::tensor::Tensor;

/// Node and relation features of a segment, padded to `n` slots per frame.
///
/// `nodes` is `[T×N×d]`, `edges` is `[T×N×N×d]`; slot `(t, i)` is valid when
/// `mask[t·N + i]` is set and pair `(i, j)` when both ends are. Invalid
/// entries are exact zeros.
#[derive(Clone, Debug)]
pub struct GraphFeatures {
    pub nodes: Var,
    pub edges: Var,
    pub mask: Vec<bool>,
    pub t: usize,
    pub n: usize,
    pub d: usize,
}

impl GraphFeatures {
    pub fn pair_valid(&self, t: usize, i: usize, j: usize) -> bool {
        self.mask[t * self.n + i] && self.mask[t * self.n + j]
    }

    /// Flat `T·N·N` pair mask.
    pub fn pair_mask(&self) -> Vec<bool> {
        let mut m = Vec::with_capacity(self.t * self.n * self.n);
        for t in 0..self.t {
            for i in 0..self.n {
                for j in 0..self.n {
                    m.push(self.pair_valid(t, i, j));
                }
            }
        }
        m
    }
}

/// Checks capacity and returns the padded slot mask.
pub(crate) fn slot_mask(segment: &VideoSegment, n: usize) -> Result<Vec<bool>> {
    for (t, f) in segment.frames.iter().enumerate() {
        if f.boxes.len() > n {
            return Err(Error::Capacity {
                frame: t,
                count: f.boxes.len(),
                capacity: n,
            });
        }
    }
    Ok(segment.mask(n))
}

/// Pools every valid box of every frame and embeds it. Returns the padded
/// `[T·N×d]` node tensor plus, per slot, the row of the compact embedding.
pub(crate) fn embed_nodes(
    tape: &mut Tape,
    segment: &VideoSegment,
    maps: &[Var],
    embed: (Var, Var),
    n: usize,
    extra_rois: impl Fn(usize, &[Option<BBox>]) -> Vec<BBox>,
) -> Result<NodeEmbedding> {
    if maps.len() != segment.frames.len() {
        return Err(Error::invalid(
            "graph features",
            format!("{} maps for {} frames", maps.len(), segment.frames.len()),
        ));
    }
    let cfg = RoiAlignConfig::default();
    let mut pooled = Vec::with_capacity(maps.len());
    let mut node_rows = Vec::new();
    let mut extra_rows = Vec::new();
    let mut slot_row = vec![None; segment.frames.len() * n];
    let mut offset = 0;
    for (t, (frame, &map)) in segment.frames.iter().zip(maps).enumerate() {
        let mut rois: Vec<BBox> = Vec::new();
        for (i, b) in frame.boxes.iter().enumerate() {
            if let Some(b) = b {
                slot_row[t * n + i] = Some(node_rows.len());
                node_rows.push(offset + rois.len());
                rois.push(*b);
            }
        }
        let extra = extra_rois(t, &frame.boxes);
        extra_rows.extend((0..extra.len()).map(|k| offset + rois.len() + k));
        rois.extend(extra);
        if rois.is_empty() {
            continue;
        }
        offset += rois.len();
        pooled.push(roi_align_taped(tape, map, frame.map.stride, &rois, cfg)?);
    }
    if pooled.is_empty() {
        return Err(Error::DegenerateSet);
    }
    let all = if pooled.len() == 1 {
        pooled[0]
    } else {
        tape.concat(&pooled, 0)?
    };
    let node_in = tape.gather_rows(all, node_rows)?;
    let compact = tape.linear(node_in, embed.0, embed.1)?;
    let extra = if extra_rows.is_empty() {
        None
    } else {
        Some(tape.gather_rows(all, extra_rows)?)
    };
    let d = tape.value(compact).last_dim();
    let padded = pad_rows(tape, compact, &slot_row, d)?;
    Ok(NodeEmbedding {
        compact,
        padded,
        slot_row,
        extra_pooled: extra,
    })
}

pub(crate) struct NodeEmbedding {
    /// `[valid boxes × d]`
    pub compact: Var,
    /// `[T·N × d]` with zero rows for masked slots.
    pub padded: Var,
    pub slot_row: Vec<Option<usize>>,
    /// Pooled extra regions (union boxes), in request order.
    pub extra_pooled: Option<Var>,
}

/// Scatters compact rows into a padded layout; `None` slots become zeros.
fn pad_rows(tape: &mut Tape, compact: Var, slot_row: &[Option<usize>], d: usize) -> Result<Var> {
    let zero_row = tape.value(compact).leading();
    let zero = tape.constant(Tensor::zeros(&[1, d]));
    let with_zero = tape.concat(&[compact, zero], 0)?;
    let idx = slot_row.iter().map(|r| r.unwrap_or(zero_row)).collect();
    tape.gather_rows(with_zero, idx)
}

/// Builds node and relation features for every frame.
///
/// Nodes are embedded RoIAlign features of each box. Relations depend on
/// `edge_mode`: the embedded union-box region, the embedding of a zero input
/// (its bias only), or the cosine similarity of the two node embeddings
/// passed through a `1→d` affine map. Every ordered pair including `(i, i)`
/// is a relation.
pub fn build_graph_features(
    tape: &mut Tape,
    segment: &VideoSegment,
    maps: &[Var],
    vars: &ParamVars,
    dims: &ModelDims,
    edge_mode: EdgeMode,
) -> Result<GraphFeatures> {
    let n = dims.n;
    let mask = slot_mask(segment, n)?;
    let frames = segment.frames.len();
    let union_rois = |_: usize, boxes: &[Option<BBox>]| -> Vec<BBox> {
        if edge_mode != EdgeMode::UnionRoi {
            return vec![];
        }
        let mut out = Vec::new();
        for a in boxes.iter().flatten() {
            for b in boxes.iter().flatten() {
                out.push(union_box(a, b));
            }
        }
        out
    };
    let nodes = embed_nodes(tape, segment, maps, vars.node_embed, n, union_rois)?;
    let d = dims.d;

    // compact edge rows are ordered frame-major, then (i, j) over valid slots
    let mut pair_row = vec![None; frames * n * n];
    let mut pairs = Vec::new();
    for t in 0..frames {
        for i in 0..n {
            for j in 0..n {
                if let (Some(ri), Some(rj)) = (nodes.slot_row[t * n + i], nodes.slot_row[t * n + j]) {
                    pair_row[(t * n + i) * n + j] = Some(pairs.len());
                    pairs.push((ri, rj));
                }
            }
        }
    }
    let compact_edges = match edge_mode {
        EdgeMode::UnionRoi => {
            let pooled = nodes.extra_pooled.expect("union regions were requested");
            tape.linear(pooled, vars.edge_embed.0, vars.edge_embed.1)?
        }
        EdgeMode::NodeConcat => {
            let zeros = tape.constant(Tensor::zeros(&[pairs.len(), dims.pooled_len()]));
            tape.linear(zeros, vars.edge_embed.0, vars.edge_embed.1)?
        }
        EdgeMode::CosineSim => {
            let sims = tape.cosine_pairs(nodes.compact, pairs)?;
            tape.linear(sims, vars.sim_embed.0, vars.sim_embed.1)?
        }
    };
    let edges = pad_rows(tape, compact_edges, &pair_row, d)?;
    let nodes = tape.reshape(nodes.padded, &[frames, n, d])?;
    let edges = tape.reshape(edges, &[frames, n, n, d])?;
    Ok(GraphFeatures {
        nodes,
        edges,
        mask,
        t: frames,
        n,
        d,
    })
}

/// `relu(W · [z_i ; z_ij ; z_j] + b)` for every ordered pair; invalid pairs
/// are zeroed. Output `[T×N×N×d]`.
pub fn aggregate_pairs(tape: &mut Tape, g: &GraphFeatures, vars: &ParamVars) -> Result<Var> {
    let (t, n, d) = (g.t, g.n, g.d);
    let nodes = tape.reshape(g.nodes, &[t * n, d])?;
    let edges = tape.reshape(g.edges, &[t * n * n, d])?;
    let mut src = Vec::with_capacity(t * n * n);
    let mut dst = Vec::with_capacity(t * n * n);
    for f in 0..t {
        for i in 0..n {
            for j in 0..n {
                src.push(f * n + i);
                dst.push(f * n + j);
            }
        }
    }
    let zi = tape.gather_rows(nodes, src)?;
    let zj = tape.gather_rows(nodes, dst)?;
    let cat = tape.concat(&[zi, edges, zj], 1)?;
    let agg = tape.linear(cat, vars.pair_aggregate.0, vars.pair_aggregate.1)?;
    let agg = tape.relu(agg);
    let mut keep = Tensor::zeros(&[t * n * n, d]);
    for (r, v) in g.pair_mask().into_iter().enumerate() {
        if v {
            keep.data_mut()[r * d..(r + 1) * d].fill(1.0);
        }
    }
    let agg = tape.mul_const(agg, keep)?;
    tape.reshape(agg, &[t, n, n, d])
}
