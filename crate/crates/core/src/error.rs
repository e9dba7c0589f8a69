use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid argument to {op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("softmax row {row} has no unmasked entries")]
    DegenerateRow { row: usize },
    #[error("pooling slice {slice} has no valid entries")]
    DegeneratePool { slice: usize },
    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,
    #[error("region {0:?} has zero area after clipping to the feature map")]
    DegenerateRoi([f64; 4]),
    #[error("frame {frame} has {count} boxes but capacity is {capacity}")]
    Capacity {
        frame: usize,
        count: usize,
        capacity: usize,
    },
    #[error("frame {frame} has no valid boxes")]
    DegenerateFrame { frame: usize },
    #[error("non-attention input has no valid items")]
    DegenerateSet,
    #[error("labels must be 0 or 1, found {0}")]
    NonBinaryLabel(f64),
    #[error("metric undefined: {0}")]
    MetricUndefined(&'static str),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss on segment {0}")]
    NonFiniteLoss(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("world spec: {0}")]
    WorldSpec(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid { op, msg: msg.into() }
    }
}
