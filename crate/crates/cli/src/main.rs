//! `stag`: generate synthetic interaction data, train and evaluate action
//! graph models, run the ablation grid, verify gradients and export
//! attention heatmaps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stag_core::model::{Architecture, EdgeMode, Hierarchy, TemporalAggregator, VariantConfig};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "stag",
    version,
    about = "Spatio-temporal action graphs on synthetic interaction data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset, one directory per segment.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus metrics.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train and evaluate every edge-mode × hierarchy variant plus baselines.
    Ablate(AblateArgs),
    /// Finite-difference check of every parameter and input gradient.
    GradCheck(GradCheckArgs),
    /// Export attention weights and per-frame heatmaps for one segment.
    DumpAttention(DumpAttentionArgs),
}

#[derive(Args, Debug, Default)]
struct VariantArgs {
    #[arg(long)]
    edge_mode: Option<EdgeMode>,
    #[arg(long)]
    hierarchy: Option<Hierarchy>,
    #[arg(long = "temporal")]
    temporal_aggregator: Option<TemporalAggregator>,
    /// Use box features only (no relations).
    #[arg(long)]
    node_only: bool,
}

impl VariantArgs {
    fn apply(&self, base: Architecture) -> Architecture {
        if self.node_only {
            let temporal_aggregator = self.temporal_aggregator.unwrap_or(match base {
                Architecture::NodeOnly { temporal_aggregator } => temporal_aggregator,
                Architecture::Graph(_) => TemporalAggregator::Lstm,
            });
            return Architecture::NodeOnly { temporal_aggregator };
        }
        match base {
            Architecture::Graph(v) => Architecture::Graph(VariantConfig {
                edge_mode: self.edge_mode.unwrap_or(v.edge_mode),
                hierarchy: self.hierarchy.unwrap_or(v.hierarchy),
                temporal_aggregator: self.temporal_aggregator.unwrap_or(v.temporal_aggregator),
            }),
            Architecture::NodeOnly { temporal_aggregator } => {
                if self.edge_mode.is_none() && self.hierarchy.is_none() {
                    Architecture::NodeOnly {
                        temporal_aggregator: self.temporal_aggregator.unwrap_or(temporal_aggregator),
                    }
                } else {
                    let d = VariantConfig::default();
                    Architecture::Graph(VariantConfig {
                        edge_mode: self.edge_mode.unwrap_or(d.edge_mode),
                        hierarchy: self.hierarchy.unwrap_or(d.hierarchy),
                        temporal_aggregator: self.temporal_aggregator.unwrap_or(d.temporal_aggregator),
                    })
                }
            }
        }
    }
}

#[derive(Args, Debug, Default)]
struct OptimArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Learning-rate multiplier applied after each epoch.
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    /// Segments per optimizer step.
    #[arg(long)]
    accumulate: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    d_k: Option<usize>,
    /// Box slots per frame.
    #[arg(long = "slots")]
    n: Option<usize>,
}

impl OptimArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let o = &mut cfg.optimizer;
        o.epochs = self.epochs.unwrap_or(o.epochs);
        o.lr = self.lr.unwrap_or(o.lr);
        o.momentum = self.momentum.unwrap_or(o.momentum);
        o.decay = self.decay.unwrap_or(o.decay);
        o.clip_norm = self.clip.unwrap_or(o.clip_norm);
        o.accumulate = self.accumulate.unwrap_or(o.accumulate);
        cfg.dims.d = self.d.unwrap_or(cfg.dims.d);
        cfg.dims.d_k = self.d_k.unwrap_or(cfg.dims.d_k);
        cfg.dims.n = self.n.unwrap_or(cfg.dims.n);
    }
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    n_pos: Option<usize>,
    #[arg(long)]
    n_neg: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    variant: VariantArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Check all twelve edge-mode × hierarchy variants.
    #[arg(long)]
    all_variants: bool,
    #[command(flatten)]
    variant: VariantArgs,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Test fixture: scale the logits' backward pass by 1.5.
    #[arg(long, hide = true)]
    corrupt_backward: bool,
}

#[derive(Args, Debug)]
struct DumpAttentionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Segment directory.
    #[arg(long)]
    segment: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::GradCheck(a) => commands::grad_check(a),
        Command::DumpAttention(a) => commands::dump_attention(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.kind.code())
        }
    }
}
