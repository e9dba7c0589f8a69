use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde_json::json;
use stag_core::checkpoint::{load_checkpoint, save_checkpoint};
use stag_core::gradcheck::{check_model_gradients, Fault};
use stag_core::heatmap::frame_heatmaps;
use stag_core::model::{
    run_taped, Architecture, InitOptions, ModelDims, StagParams, TemporalAggregator, VariantConfig,
};
use stag_core::segment::{load_dataset, VideoSegment};
use stag_core::synth::{dataset_plan, generate_segment, WorldSpec};
use stag_core::trainer::{evaluate, metrics_csv, train_with, EpochMetrics};
use stag_core::{autodiff::Tape, rng, Error};

use crate::config::RunConfig;
use crate::{AblateArgs, DumpAttentionArgs, EvalArgs, GenDataArgs, GradCheckArgs, TrainArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureKind {
    Verification,
    Numerical,
    Usage,
}

impl FailureKind {
    pub fn code(self) -> u8 {
        match self {
            FailureKind::Verification => 1,
            FailureKind::Numerical => 2,
            FailureKind::Usage => 3,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: FailureKind,
    pub error: anyhow::Error,
}

/// Runtime errors: numerical aborts are recognized from the core error
/// type, everything else counts as a failed run.
impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let numerical = error.chain().any(|e| {
            matches!(
                e.downcast_ref::<Error>(),
                Some(Error::NonFiniteLoss(_) | Error::NonFiniteGradient(_) | Error::NonFinite(_))
            )
        });
        let kind = if numerical {
            FailureKind::Numerical
        } else {
            FailureKind::Verification
        };
        Failure { kind, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CmdResult = Result<(), Failure>;

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        kind: FailureKind::Usage,
        error: error.into(),
    }
}

trait UsageExt<T> {
    fn or_usage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> UsageExt<T> for Result<T, E> {
    fn or_usage(self) -> Result<T, Failure> {
        self.map_err(usage)
    }
}

/// Worker count from `STAG_NUM_WORKERS`, defaulting to the machine's
/// available parallelism.
fn worker_pool() -> Result<rayon::ThreadPool, Failure> {
    let n = match std::env::var("STAG_NUM_WORKERS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => return Err(usage(anyhow!("STAG_NUM_WORKERS must be a positive integer, got `{v}`"))),
        },
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Failure::from(anyhow!(e)))
}

fn prepare_out_dir(dir: &Path, force: bool) -> CmdResult {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(anyhow::Error::from)?.next().is_some();
        if non_empty && !force {
            return Err(usage(anyhow!(
                "{} is not empty; pass --force to replace it",
                dir.display()
            )));
        }
        if non_empty {
            fs::remove_dir_all(dir).map_err(anyhow::Error::from)?;
        }
    }
    fs::create_dir_all(dir).map_err(anyhow::Error::from)?;
    Ok(())
}

fn require_dir(path: Option<&PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    let p = path.ok_or_else(|| usage(anyhow!("missing --{what}")))?;
    if !p.is_dir() {
        return Err(usage(anyhow!("{what} directory {} does not exist", p.display())));
    }
    Ok(p.clone())
}

fn load_data(dir: &Path) -> Result<Vec<VideoSegment>, Failure> {
    let data = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    if data.is_empty() {
        return Err(usage(anyhow!("no segments found in {}", dir.display())));
    }
    Ok(data)
}

/// Sets `dims.channels` from the data and checks slot capacity.
fn fit_dims(dims: &mut ModelDims, data: &[VideoSegment]) -> CmdResult {
    dims.channels = data[0].frames[0].map.channels();
    for s in data {
        s.validate(dims.n, dims.num_classes).or_usage()?;
    }
    Ok(())
}

pub fn gen_data(a: GenDataArgs) -> CmdResult {
    let mut cfg = RunConfig::load(a.config.as_deref()).or_usage()?;
    cfg.world.seed = a.seed;
    cfg.n_pos = a.n_pos.unwrap_or(cfg.n_pos);
    cfg.n_neg = a.n_neg.unwrap_or(cfg.n_neg);
    cfg.world.frames = a.frames.unwrap_or(cfg.world.frames);
    cfg.world.validate().or_usage()?;
    prepare_out_dir(&a.out, a.force)?;

    let world = cfg.world.clone();
    let total = cfg.n_pos + cfg.n_neg;
    let plan = dataset_plan(&world, cfg.n_pos, cfg.n_neg);
    worker_pool()?.install(|| {
        plan.par_iter()
            .try_for_each(|p| p.generate()?.save(&a.out.join(&p.segment_id)))
    })?;
    let manifest = json!({
        "seed": a.seed,
        "n_pos": cfg.n_pos,
        "n_neg": cfg.n_neg,
        "segments": total,
        "world": world,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(anyhow::Error::from)? + "\n";
    fs::write(a.out.join("dataset.json"), &text).map_err(anyhow::Error::from)?;
    print!("{text}");
    Ok(())
}

fn print_epoch(rows: &[EpochMetrics]) {
    for r in rows {
        eprintln!("{}", r.csv_row());
    }
}

pub fn train(a: TrainArgs) -> CmdResult {
    let mut cfg = RunConfig::load(a.config.as_deref()).or_usage()?;
    cfg.variant = a.variant.apply(cfg.variant);
    a.optim.apply(&mut cfg);
    cfg.optimizer.seed = a.seed;
    cfg.data = a.data.or(cfg.data);
    cfg.eval_data = a.eval_data.or(cfg.eval_data);
    cfg.out = a.out.or(cfg.out);
    cfg.validate().or_usage()?;
    let data_dir = require_dir(cfg.data.as_ref(), "data")?;
    let eval_dir = match &cfg.eval_data {
        Some(p) => Some(require_dir(Some(p), "eval-data")?),
        None => None,
    };
    let out = cfg.out.clone().ok_or_else(|| usage(anyhow!("missing --out")))?;

    let data = load_data(&data_dir)?;
    let eval_data = eval_dir.as_deref().map(load_data).transpose()?;
    fit_dims(&mut cfg.dims, &data)?;
    cfg.dims.t = data[0].num_frames();
    prepare_out_dir(&out, a.force)?;

    let o = &cfg.optimizer;
    println!(
        "lr={} momentum={} clip={} decay={} epochs={} variant={}",
        o.lr,
        o.momentum,
        o.clip_norm,
        o.decay,
        o.epochs,
        cfg.variant.label()
    );
    let mut params = StagParams::init(cfg.dims, a.seed, InitOptions::default())?;
    let rows = train_with(
        &mut params,
        &data,
        eval_data.as_deref(),
        cfg.variant,
        &cfg.optimizer,
        print_epoch,
    )?;
    save_checkpoint(&out.join("checkpoint"), &params, cfg.variant)?;
    fs::write(out.join("metrics.csv"), metrics_csv(&rows)).map_err(anyhow::Error::from)?;
    fs::write(out.join("config.json"), cfg.to_json()).map_err(anyhow::Error::from)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> CmdResult {
    if !a.checkpoint.join("manifest.json").is_file() {
        return Err(usage(anyhow!("no checkpoint manifest in {}", a.checkpoint.display())));
    }
    let data_dir = require_dir(Some(&a.data), "data")?;
    let (params, manifest) = load_checkpoint(&a.checkpoint)?;
    let data = load_data(&data_dir)?;
    let e = evaluate(&data, &params, manifest.variant)?;
    let out = json!({
        "variant": manifest.variant.label(),
        "segments": data.len(),
        "loss": e.loss,
        "accuracy": e.accuracy,
        "map": if e.map.is_nan() { None } else { Some(e.map) },
    });
    println!("{}", serde_json::to_string_pretty(&out).map_err(anyhow::Error::from)?);
    Ok(())
}

/// The twelve-cell grid in fixed order, then the box-only LSTM baseline and
/// the full graph with an LSTM over frames.
pub fn ablation_rows() -> Vec<Architecture> {
    let mut rows: Vec<Architecture> = VariantConfig::grid().into_iter().map(Architecture::Graph).collect();
    rows.push(Architecture::lstm_boxes());
    rows.push(Architecture::Graph(VariantConfig {
        temporal_aggregator: TemporalAggregator::Lstm,
        ..VariantConfig::default()
    }));
    rows
}

fn variant_fields(arch: &Architecture) -> (String, String, String, &'static str) {
    match arch {
        Architecture::Graph(v) => (
            v.edge_mode.to_string(),
            v.hierarchy.to_string(),
            v.temporal_aggregator.to_string(),
            "graph",
        ),
        Architecture::NodeOnly { temporal_aggregator } => (
            String::new(),
            String::new(),
            temporal_aggregator.to_string(),
            "node_only",
        ),
    }
}

pub fn ablate(a: AblateArgs) -> CmdResult {
    let mut cfg = RunConfig::load(a.config.as_deref()).or_usage()?;
    a.optim.apply(&mut cfg);
    cfg.optimizer.seed = a.seed;
    cfg.data = a.data.or(cfg.data);
    cfg.eval_data = a.eval_data.or(cfg.eval_data);
    cfg.validate().or_usage()?;
    let data = load_data(&require_dir(cfg.data.as_ref(), "data")?)?;
    let eval_data = load_data(&require_dir(cfg.eval_data.as_ref(), "eval-data")?)?;
    fit_dims(&mut cfg.dims, &data)?;

    let rows = ablation_rows();
    let results: Vec<Result<(f64, f64), Error>> = worker_pool()?.install(|| {
        rows.par_iter()
            .map(|&arch| {
                let mut params = StagParams::init(cfg.dims, a.seed, InitOptions::default())?;
                train_with(&mut params, &data, None, arch, &cfg.optimizer, |_| {})?;
                let e = evaluate(&eval_data, &params, arch)?;
                Ok((e.accuracy, e.map))
            })
            .collect()
    });
    let mut csv = String::from("row,architecture,edge_mode,hierarchy,temporal_aggregator,accuracy,map,error\n");
    for (i, (arch, res)) in rows.iter().zip(&results).enumerate() {
        let (e, h, t, kind) = variant_fields(arch);
        let (acc, map, err) = match res {
            Ok((acc, map)) => (*acc, *map, String::new()),
            Err(e) => (f64::NAN, f64::NAN, e.to_string().replace([',', '\n'], ";")),
        };
        let _ = writeln!(csv, "{i},{kind},{e},{h},{t},{acc},{map},{err}");
        eprintln!("{:<40} accuracy={acc:.4} map={map:.4}", arch.label());
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(anyhow::Error::from)?;
    }
    fs::write(&a.out, csv).map_err(anyhow::Error::from)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

/// The small fixture model and segment gradient checks run on:
/// T=2, N=3, d=8.
pub fn grad_check_fixture(seed: u64) -> Result<(VideoSegment, StagParams), Error> {
    let world = WorldSpec {
        frames: 2,
        capacity: 3,
        ..WorldSpec::default()
    };
    let segment = generate_segment(&world.with_seed(rng::derive_named(seed, "segment")), true)?;
    let dims = ModelDims {
        d: 8,
        d_k: 4,
        n: 3,
        t: 2,
        ..ModelDims::default()
    };
    let params = StagParams::init(
        dims,
        seed,
        InitOptions {
            identity_nonlocal: false,
        },
    )?;
    Ok((segment, params))
}

pub fn grad_check(a: GradCheckArgs) -> CmdResult {
    if !(a.eps > 0.0 && a.tol > 0.0) {
        return Err(usage(anyhow!("--eps and --tol must be positive")));
    }
    let (segment, params) = grad_check_fixture(a.seed)?;
    let variants: Vec<Architecture> = if a.all_variants {
        VariantConfig::grid().into_iter().map(Architecture::Graph).collect()
    } else {
        vec![a.variant.apply(Architecture::default())]
    };
    let fault = if a.corrupt_backward {
        Fault::ScaledLogitBackward(1.5)
    } else {
        Fault::None
    };
    let mut failed = Vec::new();
    for arch in variants {
        println!("variant {}", arch.label());
        for g in check_model_gradients(&segment, &params, arch, a.eps, fault)? {
            let ok = g.passes(a.tol);
            println!(
                "  {:<20} {:>6} {:.3e} {}",
                g.name,
                g.scalars,
                g.max_rel_err,
                if ok { "ok" } else { "FAIL" }
            );
            if !ok {
                failed.push(format!("{} ({})", g.name, arch.label()));
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            kind: FailureKind::Verification,
            error: anyhow!("gradient check failed for {}", failed.join(", ")),
        })
    }
}

pub fn dump_attention(a: DumpAttentionArgs) -> CmdResult {
    if !a.checkpoint.join("manifest.json").is_file() {
        return Err(usage(anyhow!("no checkpoint manifest in {}", a.checkpoint.display())));
    }
    if !a.segment.join("meta.json").is_file() {
        return Err(usage(anyhow!("no segment in {}", a.segment.display())));
    }
    let (params, manifest) = load_checkpoint(&a.checkpoint)?;
    let segment = VideoSegment::load(&a.segment)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = run_taped(&mut tape, &segment, &params, &vars, manifest.variant, false)?;
    fs::create_dir_all(&a.out).map_err(anyhow::Error::from)?;
    let mut record = out.attention.to_json();
    record["segment_id"] = json!(segment.segment_id);
    record["variant"] = json!(manifest.variant);
    record["logits"] = json!(tape.value(out.logits).data());
    let text = serde_json::to_string_pretty(&record).map_err(anyhow::Error::from)? + "\n";
    fs::write(a.out.join("attention.json"), text).map_err(anyhow::Error::from)?;
    match frame_heatmaps(&segment, &out.attention) {
        Some(images) => {
            for (t, img) in images.iter().enumerate() {
                fs::write(a.out.join(format!("frame_{t:03}.pgm")), img.to_pgm()).map_err(anyhow::Error::from)?;
            }
            println!(
                "wrote attention.json and {} heatmaps to {}",
                images.len(),
                a.out.display()
            );
        }
        None => println!(
            "wrote attention.json to {}; {} has no spatial attention, so no heatmaps",
            a.out.display(),
            manifest.variant.label()
        ),
    }
    Ok(())
}
