use super::graph::{embed_nodes, slot_mask};
use super::{
    aggregate_pairs, build_graph_features, non_local, Architecture, AttentionRecord, Hierarchy, NonLocalVars,
    ParamVars, StagParams, TemporalAggregator, VariantConfig,
};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::lstm::lstm_sequence;
use crate::segment::VideoSegment;
use crate::tensor::Tensor;

/// Outputs of one taped forward pass.
pub struct Taped {
    /// `[num_classes]`
    pub logits: Var,
    /// One `C×H×W` handle per frame.
    pub maps: Vec<Var>,
    /// `[T×d]` per-frame features, when the path produces them.
    pub frame_feats: Option<Var>,
    /// `[1×d]`
    pub video_feat: Var,
    pub attention: AttentionRecord,
}

/// Per-frame attention over all valid relations, then the mean over them.
///
/// `pairs` is `[T×N×N×d]`; `mask` is the `T·N` slot mask. Returns `[T×d]`
/// frame features and the `[T×N²×N²]` attention (zeros where invalid).
pub fn spatial_stage(tape: &mut Tape, pairs: Var, mask: &[bool], block: NonLocalVars) -> Result<(Var, Tensor)> {
    let shape = tape.value(pairs).shape().to_vec();
    if shape.len() != 4 || shape[1] != shape[2] || mask.len() != shape[0] * shape[1] {
        return Err(Error::shape("spatial_stage", &shape, &[mask.len()]));
    }
    let (t, n, d) = (shape[0], shape[1], shape[3]);
    let nn = n * n;
    let flat = tape.reshape(pairs, &[t * nn, d])?;
    let mut attention = Tensor::zeros(&[t, nn, nn]);
    let mut frames = Vec::with_capacity(t);
    for f in 0..t {
        let slots: Vec<usize> = (0..nn)
            .filter(|&p| mask[f * n + p / n] && mask[f * n + p % n])
            .collect();
        if slots.is_empty() {
            return Err(Error::DegenerateFrame { frame: f });
        }
        let items = tape.gather_rows(flat, slots.iter().map(|&p| f * nn + p).collect())?;
        let (out, attn) = non_local(tape, block, items, &vec![true; slots.len()])?;
        let k = slots.len();
        let a = attention.data_mut();
        for (r, &pr) in slots.iter().enumerate() {
            for (c, &pc) in slots.iter().enumerate() {
                a[(f * nn + pr) * nn + pc] = attn.data()[r * k + c];
            }
        }
        let pooled = tape.mean_axis(out, 0, None)?;
        frames.push(tape.reshape(pooled, &[1, d])?);
    }
    let feats = if frames.len() == 1 {
        frames[0]
    } else {
        tape.concat(&frames, 0)?
    };
    Ok((feats, attention))
}

/// Reduces `[T×d]` frame features to one `[1×d]` video feature.
///
/// `NonLocal` attends over frames and averages; `Lstm` returns the final
/// hidden state; `Mean` averages directly. Only `NonLocal` yields a
/// temporal attention matrix.
pub fn temporal_stage(
    tape: &mut Tape,
    frame_feats: Var,
    vars: &ParamVars,
    aggregator: TemporalAggregator,
) -> Result<(Var, Option<Tensor>)> {
    let shape = tape.value(frame_feats).shape().to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::invalid("temporal_stage", format!("frame features {shape:?}")));
    }
    let d = shape[1];
    match aggregator {
        TemporalAggregator::NonLocal => {
            let (out, attn) = non_local(tape, vars.temporal_nl, frame_feats, &vec![true; shape[0]])?;
            let pooled = tape.mean_axis(out, 0, None)?;
            Ok((tape.reshape(pooled, &[1, d])?, Some(attn)))
        }
        TemporalAggregator::Lstm => Ok((lstm_sequence(tape, frame_feats, vars.lstm)?, None)),
        TemporalAggregator::Mean => {
            let pooled = tape.mean_axis(frame_feats, 0, None)?;
            Ok((tape.reshape(pooled, &[1, d])?, None))
        }
    }
}

fn bind_maps(tape: &mut Tape, segment: &VideoSegment, map_grad: bool) -> Vec<Var> {
    segment
        .frames
        .iter()
        .map(|f| {
            if map_grad {
                tape.leaf(f.map.data.clone())
            } else {
                tape.constant(f.map.data.clone())
            }
        })
        .collect()
}

fn check_frames(segment: &VideoSegment) -> Result<()> {
    if segment.frames.is_empty() {
        return Err(Error::invalid("forward", "segment has no frames"));
    }
    match segment.frames.iter().position(|f| f.valid_count() == 0) {
        Some(frame) => Err(Error::DegenerateFrame { frame }),
        None => Ok(()),
    }
}

fn classify(tape: &mut Tape, video_feat: Var, vars: &ParamVars) -> Result<Var> {
    let logits = tape.linear(video_feat, vars.classifier.0, vars.classifier.1)?;
    let k = tape.value(logits).len();
    tape.reshape(logits, &[k])
}

/// Records a full forward pass on `tape`. With `map_grad` the feature maps
/// are differentiable leaves; otherwise constants.
pub fn run_taped(
    tape: &mut Tape,
    segment: &VideoSegment,
    params: &StagParams,
    vars: &ParamVars,
    arch: Architecture,
    map_grad: bool,
) -> Result<Taped> {
    let dims = params.dims;
    let maps = bind_maps(tape, segment, map_grad);
    let t = segment.frames.len();
    let mut attention = AttentionRecord {
        t,
        n: dims.n,
        mask: slot_mask(segment, dims.n)?,
        spatial: None,
        temporal: None,
    };
    let variant = match arch {
        Architecture::Graph(v) => v,
        Architecture::NodeOnly { temporal_aggregator } => {
            check_frames(segment)?;
            let nodes = embed_nodes(tape, segment, &maps, vars.node_embed, dims.n, |_, _| vec![])?;
            let nodes = tape.reshape(nodes.padded, &[t, dims.n, dims.d])?;
            let frame_feats = tape.mean_axis(nodes, 1, Some(attention.mask.clone()))?;
            let (video_feat, temporal) = temporal_stage(tape, frame_feats, vars, temporal_aggregator)?;
            attention.temporal = temporal;
            let logits = classify(tape, video_feat, vars)?;
            return Ok(Taped {
                logits,
                maps,
                frame_feats: Some(frame_feats),
                video_feat,
                attention,
            });
        }
    };
    if variant.hierarchy != Hierarchy::None {
        check_frames(segment)?;
    }
    let graph = build_graph_features(tape, segment, &maps, vars, &dims, variant.edge_mode)?;
    let pairs = aggregate_pairs(tape, &graph, vars)?;
    let pair_mask = graph.pair_mask();
    let (n, d) = (dims.n, dims.d);

    let spatial = |tape: &mut Tape, attention: &mut AttentionRecord| -> Result<Var> {
        let (feats, attn) = spatial_stage(tape, pairs, &graph.mask, vars.spatial_nl)?;
        attention.spatial = Some(attn);
        Ok(feats)
    };
    let pooled_frames = |tape: &mut Tape| -> Result<Var> {
        let flat = tape.reshape(pairs, &[t, n * n, d])?;
        tape.mean_axis(flat, 1, Some(pair_mask.clone()))
    };

    let (frame_feats, video_feat) = match variant.hierarchy {
        Hierarchy::SpaceAndTime | Hierarchy::TimeOnly => {
            let feats = if variant.hierarchy == Hierarchy::SpaceAndTime {
                spatial(tape, &mut attention)?
            } else {
                pooled_frames(tape)?
            };
            let (video, temporal) = temporal_stage(tape, feats, vars, variant.temporal_aggregator)?;
            attention.temporal = temporal;
            (Some(feats), video)
        }
        Hierarchy::SpaceOnly => {
            let feats = spatial(tape, &mut attention)?;
            let (video, _) = temporal_stage(tape, feats, vars, TemporalAggregator::Mean)?;
            (Some(feats), video)
        }
        Hierarchy::None => {
            let flat = tape.reshape(pairs, &[t * n * n, d])?;
            let pooled = tape.mean_axis(flat, 0, Some(pair_mask.clone()))?;
            (None, tape.reshape(pooled, &[1, d])?)
        }
    };
    let logits = classify(tape, video_feat, vars)?;
    Ok(Taped {
        logits,
        maps,
        frame_feats,
        video_feat,
        attention,
    })
}

/// Class logits and attention for one segment under a graph variant.
pub fn forward(
    segment: &VideoSegment,
    params: &StagParams,
    variant: VariantConfig,
) -> Result<(Tensor, AttentionRecord)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = run_taped(&mut tape, segment, params, &vars, Architecture::Graph(variant), false)?;
    Ok((tape.value(out.logits).clone(), out.attention))
}

/// Logits of the box-only path: per-frame mean of node embeddings, then the
/// given temporal aggregator.
pub fn node_only_forward(
    segment: &VideoSegment,
    params: &StagParams,
    aggregator: TemporalAggregator,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = run_taped(
        &mut tape,
        segment,
        params,
        &vars,
        Architecture::NodeOnly {
            temporal_aggregator: aggregator,
        },
        false,
    )?;
    Ok(tape.value(out.logits).clone())
}

/// Forward + logistic loss + backward; adds gradients into `params`.
/// Returns the loss and the logits.
pub fn loss_and_grads(segment: &VideoSegment, params: &mut StagParams, arch: Architecture) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = run_taped(&mut tape, segment, params, &vars, arch, false)?;
    let loss = tape.bce_with_logits(out.logits, &segment.label_tensor())?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss(segment.segment_id.clone()));
    }
    tape.backward(loss)?;
    params.accumulate_grads(&tape, &vars);
    Ok((value, tape.value(out.logits).clone()))
}

/// Elementwise mean of two probability vectors (late score fusion).
pub fn ensemble_average(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_map(b, "ensemble_average", |x, y| 0.5 * (x + y))
}
