//! Finite-difference verification of the full loss over every parameter
//! tensor and every input feature map.

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{run_taped, Architecture, StagParams};
use crate::segment::VideoSegment;
use crate::tensor::Tensor;

/// Deliberate backward faults used as negative controls.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Fault {
    #[default]
    None,
    /// Inserts an identity op on the logits whose backward multiplies the
    /// incoming gradient by the given factor.
    ScaledLogitBackward(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    /// Parameter name, or `map.<t>` for the feature map of frame `t`.
    pub name: String,
    pub scalars: usize,
    pub max_rel_err: f64,
}

impl GroupCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

enum Target<'a> {
    Param(&'a str),
    Map(usize),
}

fn loss_and_grad(
    segment: &VideoSegment,
    params: &StagParams,
    arch: Architecture,
    fault: Fault,
    target: &Target,
) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = run_taped(&mut tape, segment, params, &vars, arch, true)?;
    let mut logits = out.logits;
    if let Fault::ScaledLogitBackward(k) = fault {
        let value = tape.value(logits).clone();
        logits = tape.push(value, vec![logits], Box::new(move |g, _, _, _| vec![Some(g.scale(k))]));
    }
    let loss = tape.bce_with_logits(logits, &segment.label_tensor())?;
    tape.backward(loss)?;
    let var: Var = match target {
        Target::Param(name) => {
            let idx = params
                .named()
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::invalid("gradient check", format!("unknown parameter `{name}`")))?;
            vars.in_order()[idx]
        }
        Target::Map(t) => out.maps[*t],
    };
    Ok((tape.value(loss).item(), tape.grad(var)))
}

/// Central-difference check of `loss ∘ forward` for every parameter tensor
/// (in checkpoint order) followed by every frame's feature map.
pub fn check_model_gradients(
    segment: &VideoSegment,
    params: &StagParams,
    arch: Architecture,
    eps: f64,
    fault: Fault,
) -> Result<Vec<GroupCheck>> {
    let mut report = Vec::new();
    for (name, p) in params.named() {
        let target = Target::Param(name);
        let mut probe = params.clone();
        let err = grad_check(
            |x| {
                probe.param_mut(name).expect("known parameter").value = x.clone();
                loss_and_grad(segment, &probe, arch, fault, &target)
            },
            &p.value,
            eps,
        )?;
        report.push(GroupCheck {
            name: name.to_string(),
            scalars: p.value.len(),
            max_rel_err: err,
        });
    }
    for t in 0..segment.frames.len() {
        let target = Target::Map(t);
        let mut probe = segment.clone();
        let base = segment.frames[t].map.data.clone();
        let err = grad_check(
            |x| {
                probe.frames[t].map.data = x.clone();
                loss_and_grad(&probe, params, arch, fault, &target)
            },
            &base,
            eps,
        )?;
        report.push(GroupCheck {
            name: format!("map.{t}"),
            scalars: base.len(),
            max_rel_err: err,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitOptions, ModelDims, VariantConfig};
    use crate::synth::{generate_segment, WorldSpec};

    fn fixture() -> (VideoSegment, StagParams) {
        let spec = WorldSpec {
            frames: 2,
            capacity: 3,
            ..WorldSpec::default()
        };
        let seg = generate_segment(&spec.with_seed(8), true).unwrap();
        let dims = ModelDims {
            d: 8,
            d_k: 4,
            n: 3,
            t: 2,
            ..ModelDims::default()
        };
        let params = StagParams::init(
            dims,
            3,
            InitOptions {
                identity_nonlocal: false,
            },
        )
        .unwrap();
        (seg, params)
    }

    #[test]
    fn full_model_passes() {
        let (seg, params) = fixture();
        let report = check_model_gradients(
            &seg,
            &params,
            Architecture::Graph(VariantConfig::default()),
            1e-5,
            Fault::None,
        )
        .unwrap();
        assert_eq!(report.len(), params.named().len() + 2);
        for g in &report {
            assert!(g.passes(1e-5), "{} {}", g.name, g.max_rel_err);
        }
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let (seg, params) = fixture();
        let report = check_model_gradients(
            &seg,
            &params,
            Architecture::lstm_boxes(),
            1e-5,
            Fault::ScaledLogitBackward(1.5),
        )
        .unwrap();
        assert!(report.iter().any(|g| !g.passes(1e-5)));
    }
}
