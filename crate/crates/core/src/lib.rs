//! Spatio-temporal action graphs over object boxes.
//!
//! Per-frame object boxes and their pairwise union regions are pooled from
//! feature maps with RoIAlign, embedded, combined into relation features,
//! and reduced by non-local attention first within each frame and then
//! across frames. Everything runs on a small reverse-mode autodiff tape in
//! `f64`, with a synthetic moving-objects world for training data.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod heatmap;
pub mod loss;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod segment;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{BBox, FeatureMap};
pub use model::{Architecture, EdgeMode, Hierarchy, ModelDims, StagParams, TemporalAggregator, VariantConfig};
pub use segment::{Frame, VideoSegment};
pub use tensor::Tensor;
