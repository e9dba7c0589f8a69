//! The action-graph model: relation features from union boxes, per-frame
//! attention over all box pairs, attention over frames, and a classifier.

mod attention;
mod forward;
mod graph;
mod nonlocal;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use attention::AttentionRecord;
pub use forward::{
    ensemble_average, forward, loss_and_grads, node_only_forward, run_taped, spatial_stage, temporal_stage, Taped,
};
pub use graph::{aggregate_pairs, build_graph_features, GraphFeatures};
pub use nonlocal::{non_local, NonLocalVars};
pub use params::{Affine, InitOptions, LstmParams, NonLocalBlock, Param, ParamVars, StagParams};

/// Where relation (edge) features come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMode {
    /// RoIAlign over the union box of each pair.
    UnionRoi,
    /// No relation appearance; pairs see only their node features.
    NodeConcat,
    /// Cosine similarity of the two node embeddings, lifted to `d`.
    CosineSim,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hierarchy {
    SpaceAndTime,
    SpaceOnly,
    TimeOnly,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalAggregator {
    NonLocal,
    Lstm,
    Mean,
}

macro_rules! str_enum {
    ($ty:ty { $($variant:path => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(&self) -> &'static str {
                match self { $($variant => $name),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(Error::invalid(stringify!($ty), format!("unknown value `{s}`"))),
                }
            }
        }
    };
}

str_enum!(EdgeMode {
    EdgeMode::UnionRoi => "union_roi",
    EdgeMode::NodeConcat => "node_concat",
    EdgeMode::CosineSim => "cosine_sim",
});
str_enum!(Hierarchy {
    Hierarchy::SpaceAndTime => "space_and_time",
    Hierarchy::SpaceOnly => "space_only",
    Hierarchy::TimeOnly => "time_only",
    Hierarchy::None => "none",
});
str_enum!(TemporalAggregator {
    TemporalAggregator::NonLocal => "non_local",
    TemporalAggregator::Lstm => "lstm",
    TemporalAggregator::Mean => "mean",
});

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariantConfig {
    pub edge_mode: EdgeMode,
    pub hierarchy: Hierarchy,
    pub temporal_aggregator: TemporalAggregator,
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig {
            edge_mode: EdgeMode::UnionRoi,
            hierarchy: Hierarchy::SpaceAndTime,
            temporal_aggregator: TemporalAggregator::NonLocal,
        }
    }
}

impl VariantConfig {
    pub const EDGE_MODES: [EdgeMode; 3] = [EdgeMode::UnionRoi, EdgeMode::NodeConcat, EdgeMode::CosineSim];
    pub const HIERARCHIES: [Hierarchy; 4] = [
        Hierarchy::SpaceAndTime,
        Hierarchy::SpaceOnly,
        Hierarchy::TimeOnly,
        Hierarchy::None,
    ];

    pub fn new(edge_mode: EdgeMode, hierarchy: Hierarchy, temporal_aggregator: TemporalAggregator) -> Self {
        VariantConfig {
            edge_mode,
            hierarchy,
            temporal_aggregator,
        }
    }

    /// The 3 × 4 edge-mode × hierarchy grid with non-local temporal attention.
    pub fn grid() -> Vec<VariantConfig> {
        Self::EDGE_MODES
            .iter()
            .flat_map(|&e| {
                Self::HIERARCHIES
                    .iter()
                    .map(move |&h| VariantConfig::new(e, h, TemporalAggregator::NonLocal))
            })
            .collect()
    }
}

/// Which forward path a model runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// The full graph model under one variant.
    Graph(VariantConfig),
    /// Node features only: per-frame mean of box embeddings, then temporal
    /// aggregation. No relation features are built.
    NodeOnly { temporal_aggregator: TemporalAggregator },
}

impl Architecture {
    /// The box-only baseline with an LSTM over frames.
    pub fn lstm_boxes() -> Self {
        Architecture::NodeOnly {
            temporal_aggregator: TemporalAggregator::Lstm,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Architecture::Graph(v) => format!("{}/{}/{}", v.edge_mode, v.hierarchy, v.temporal_aggregator),
            Architecture::NodeOnly { temporal_aggregator } => format!("node_only/-/{temporal_aggregator}"),
        }
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Graph(VariantConfig::default())
    }
}

/// Model sizes. `channels` is the feature-map depth; pooled regions are
/// `channels × 7 × 7` before embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub channels: usize,
    pub d: usize,
    pub d_k: usize,
    /// Box slots per frame.
    pub n: usize,
    pub t: usize,
    pub num_classes: usize,
}

impl ModelDims {
    pub fn pooled_len(&self) -> usize {
        self.channels * crate::geometry::RoiAlignConfig::default().cells()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.d == 0 || self.d_k == 0 || self.n == 0 || self.t == 0 || self.num_classes == 0 {
            return Err(Error::invalid("model dims", format!("{self:?} has a zero size")));
        }
        Ok(())
    }
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            channels: 3,
            d: 32,
            d_k: 16,
            n: 6,
            t: 8,
            num_classes: 1,
        }
    }
}
