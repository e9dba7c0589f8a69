use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::ModelDims;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::lstm::LstmVars;
use crate::rng;
use crate::tensor::Tensor;

/// A learnable tensor with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// `y = x·W + b`
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub w: Param,
    pub b: Param,
}

impl Affine {
    fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Affine {
            w: Param::new(xavier(&[fan_in, fan_out], fan_in, fan_out, rng)),
            b: Param::new(Tensor::zeros(&[fan_out])),
        }
    }
}

/// Weights of one non-local attention block.
///
/// `theta`, `phi`: `d×d_k` query/key projections; `g`: `d×d` value map;
/// `out`: `d×d` output projection added back onto the input when
/// `use_residual` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct NonLocalBlock {
    pub theta: Param,
    pub phi: Param,
    pub g: Param,
    pub out: Param,
    pub use_residual: bool,
}

impl NonLocalBlock {
    fn init(d: usize, d_k: usize, identity: bool, rng: &mut impl Rng) -> Self {
        let out = if identity {
            Tensor::zeros(&[d, d])
        } else {
            xavier(&[d, d], d, d, rng)
        };
        NonLocalBlock {
            theta: Param::new(xavier(&[d, d_k], d, d_k, rng)),
            phi: Param::new(xavier(&[d, d_k], d, d_k, rng)),
            g: Param::new(xavier(&[d, d], d, d, rng)),
            out: Param::new(out),
            use_residual: true,
        }
    }
}

/// Gate-packed LSTM weights, see [`crate::lstm`].
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_x: Param,
    pub w_h: Param,
    pub b: Param,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InitOptions {
    /// Zero the non-local output projections so each block starts as an
    /// exact pass-through.
    pub identity_nonlocal: bool,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            identity_nonlocal: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StagParams {
    pub dims: ModelDims,
    pub node_embed: Affine,
    pub edge_embed: Affine,
    /// Lifts a scalar cosine similarity to `d` (cosine edge mode only).
    pub sim_embed: Affine,
    pub pair_aggregate: Affine,
    pub spatial_nl: NonLocalBlock,
    pub temporal_nl: NonLocalBlock,
    pub lstm: LstmParams,
    pub classifier: Affine,
}

/// Tape handles for every parameter, in the same layout as [`StagParams`].
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub node_embed: (Var, Var),
    pub edge_embed: (Var, Var),
    pub sim_embed: (Var, Var),
    pub pair_aggregate: (Var, Var),
    pub spatial_nl: super::NonLocalVars,
    pub temporal_nl: super::NonLocalVars,
    pub lstm: LstmVars,
    pub classifier: (Var, Var),
}

fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).unwrap();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).unwrap()
}

impl StagParams {
    pub fn init(dims: ModelDims, seed: u64, opts: InitOptions) -> Result<Self> {
        dims.validate()?;
        let mut r = rng::rng(rng::derive_named(seed, "init"));
        let (d, p) = (dims.d, dims.pooled_len());
        Ok(StagParams {
            dims,
            node_embed: Affine::init(p, d, &mut r),
            edge_embed: Affine::init(p, d, &mut r),
            sim_embed: Affine::init(1, d, &mut r),
            pair_aggregate: Affine::init(3 * d, d, &mut r),
            spatial_nl: NonLocalBlock::init(d, dims.d_k, opts.identity_nonlocal, &mut r),
            temporal_nl: NonLocalBlock::init(d, dims.d_k, opts.identity_nonlocal, &mut r),
            lstm: LstmParams {
                w_x: Param::new(xavier(&[d, 4 * d], d, 4 * d, &mut r)),
                w_h: Param::new(xavier(&[d, 4 * d], d, 4 * d, &mut r)),
                b: Param::new(Tensor::zeros(&[4 * d])),
            },
            classifier: Affine::init(d, dims.num_classes, &mut r),
        })
    }

    /// Every parameter with its stable name, in checkpoint order.
    pub fn named(&self) -> Vec<(&'static str, &Param)> {
        vec![
            ("node_embed.w", &self.node_embed.w),
            ("node_embed.b", &self.node_embed.b),
            ("edge_embed.w", &self.edge_embed.w),
            ("edge_embed.b", &self.edge_embed.b),
            ("sim_embed.w", &self.sim_embed.w),
            ("sim_embed.b", &self.sim_embed.b),
            ("pair_aggregate.w", &self.pair_aggregate.w),
            ("pair_aggregate.b", &self.pair_aggregate.b),
            ("spatial_nl.theta", &self.spatial_nl.theta),
            ("spatial_nl.phi", &self.spatial_nl.phi),
            ("spatial_nl.g", &self.spatial_nl.g),
            ("spatial_nl.out", &self.spatial_nl.out),
            ("temporal_nl.theta", &self.temporal_nl.theta),
            ("temporal_nl.phi", &self.temporal_nl.phi),
            ("temporal_nl.g", &self.temporal_nl.g),
            ("temporal_nl.out", &self.temporal_nl.out),
            ("lstm.w_x", &self.lstm.w_x),
            ("lstm.w_h", &self.lstm.w_h),
            ("lstm.b", &self.lstm.b),
            ("classifier.w", &self.classifier.w),
            ("classifier.b", &self.classifier.b),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![
            ("node_embed.w", &mut self.node_embed.w),
            ("node_embed.b", &mut self.node_embed.b),
            ("edge_embed.w", &mut self.edge_embed.w),
            ("edge_embed.b", &mut self.edge_embed.b),
            ("sim_embed.w", &mut self.sim_embed.w),
            ("sim_embed.b", &mut self.sim_embed.b),
            ("pair_aggregate.w", &mut self.pair_aggregate.w),
            ("pair_aggregate.b", &mut self.pair_aggregate.b),
            ("spatial_nl.theta", &mut self.spatial_nl.theta),
            ("spatial_nl.phi", &mut self.spatial_nl.phi),
            ("spatial_nl.g", &mut self.spatial_nl.g),
            ("spatial_nl.out", &mut self.spatial_nl.out),
            ("temporal_nl.theta", &mut self.temporal_nl.theta),
            ("temporal_nl.phi", &mut self.temporal_nl.phi),
            ("temporal_nl.g", &mut self.temporal_nl.g),
            ("temporal_nl.out", &mut self.temporal_nl.out),
            ("lstm.w_x", &mut self.lstm.w_x),
            ("lstm.w_h", &mut self.lstm.w_h),
            ("lstm.b", &mut self.lstm.b),
            ("classifier.w", &mut self.classifier.w),
            ("classifier.b", &mut self.classifier.b),
        ]
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.named().into_iter().find(|(n, _)| *n == name).map(|(_, p)| p)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.named_mut().into_iter().find(|(n, _)| *n == name).map(|(_, p)| p)
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.named_mut() {
            p.zero_grad();
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, p)| p.value.len()).sum()
    }

    /// Registers every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        let mut vars = self.named().into_iter().map(|(_, p)| tape.leaf(p.value.clone()));
        let mut next = || vars.next().unwrap();
        let mut pair = || (next(), next());
        let node_embed = pair();
        let edge_embed = pair();
        let sim_embed = pair();
        let pair_aggregate = pair();
        let mut nl = |use_residual| super::NonLocalVars {
            theta: next(),
            phi: next(),
            g: next(),
            out: next(),
            use_residual,
        };
        let spatial_nl = nl(self.spatial_nl.use_residual);
        let temporal_nl = nl(self.temporal_nl.use_residual);
        let lstm = LstmVars {
            w_x: next(),
            w_h: next(),
            b: next(),
        };
        ParamVars {
            node_embed,
            edge_embed,
            sim_embed,
            pair_aggregate,
            spatial_nl,
            temporal_nl,
            lstm,
            classifier: (next(), next()),
        }
    }

    /// Adds the tape gradients of a bound set into the gradient buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &ParamVars) {
        let order = vars.in_order();
        for ((_, p), v) in self.named_mut().into_iter().zip(order) {
            p.grad.accumulate(&tape.grad(v));
        }
    }

    /// Copies values from another parameter set of identical layout.
    pub fn load_values(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        for (name, t) in values {
            let p = self
                .param_mut(name)
                .ok_or_else(|| Error::Format(format!("unknown parameter `{name}`")))?;
            if p.value.shape() != t.shape() {
                return Err(Error::shape("load parameter", p.value.shape(), t.shape()));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

impl ParamVars {
    /// Handles in the same order as [`StagParams::named`].
    pub fn in_order(&self) -> Vec<Var> {
        let nl = |b: &super::NonLocalVars| [b.theta, b.phi, b.g, b.out];
        let mut v = vec![
            self.node_embed.0,
            self.node_embed.1,
            self.edge_embed.0,
            self.edge_embed.1,
            self.sim_embed.0,
            self.sim_embed.1,
            self.pair_aggregate.0,
            self.pair_aggregate.1,
        ];
        v.extend(nl(&self.spatial_nl));
        v.extend(nl(&self.temporal_nl));
        v.extend([
            self.lstm.w_x,
            self.lstm.w_h,
            self.lstm.b,
            self.classifier.0,
            self.classifier.1,
        ]);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_identity_blocks_are_zero() {
        let dims = ModelDims::default();
        let a = StagParams::init(dims, 9, InitOptions::default()).unwrap();
        let b = StagParams::init(dims, 9, InitOptions::default()).unwrap();
        let c = StagParams::init(dims, 10, InitOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.spatial_nl.out.value.data().iter().all(|&v| v == 0.0));
        for (_, p) in a.named() {
            assert_eq!(p.value.shape(), p.grad.shape());
            assert!(p.value.is_finite());
        }
    }

    #[test]
    fn bind_and_accumulate_follow_the_same_order() {
        let dims = ModelDims {
            channels: 1,
            d: 2,
            d_k: 1,
            n: 2,
            t: 1,
            num_classes: 1,
        };
        let mut p = StagParams::init(dims, 1, InitOptions::default()).unwrap();
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        for ((_, param), v) in p.named().into_iter().zip(vars.in_order()) {
            assert_eq!(&param.value, tape.value(v));
        }
        p.accumulate_grads(&tape, &vars);
        assert!(p.named().iter().all(|(_, q)| q.grad.data().iter().all(|&g| g == 0.0)));
    }
}
