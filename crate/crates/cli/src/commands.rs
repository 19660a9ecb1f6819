//! One function per subcommand. Each returns the process exit code on
//! success; errors are mapped to codes by `main`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use corpgraph::dataset::{self, IndicatorSchema, SplitPart};
use corpgraph::graph::{self, ExportFormat};
use corpgraph::training::{self, OptimizerKind};
use corpgraph::{gradcheck, metrics, pipeline, DataConfig, GraphMode};
use serde::Serialize;
use serde_json::json;

use crate::config::{write_json, RunConfig};
use crate::{usage, EvalArgs, FormatArg, GradcheckArgs, GraphArg, GraphFlags, MapArgs, OptimizerArg, SplitArg, SynthArgs, TrainArgs};

/// Largest relative gradient error `gradcheck` accepts.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load(path: &Path) -> Result<Vec<dataset::IndicatorPanel>> {
    dataset::load_dataset(path, &IndicatorSchema::default()).with_context(|| format!("loading {}", path.display()))
}

/// `data.csv` → `data.<suffix>`, next to it.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn synth(a: &SynthArgs) -> Result<u8> {
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return Err(usage(format!("--sigma must be a finite value >= 0, got {}", a.sigma)));
    }
    let data = dataset::generate_synthetic(a.n, a.years, a.sigma, a.seed)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let file = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    dataset::write_dataset(file, &data.panels, &IndicatorSchema::default())?;
    let truth_path = sibling(&a.out, "truth.csv");
    let truth = fs::File::create(&truth_path).with_context(|| format!("creating {}", truth_path.display()))?;
    dataset::write_truth(truth, &data.truth)?;
    write_json(
        &sibling(&a.out, "run_config.json"),
        &json!({"command": "synth", "n": a.n, "years": a.years, "sigma": a.sigma, "seed": a.seed, "out": a.out}),
    )?;
    let rows: usize = data.panels.iter().map(|p| p.len()).sum();
    println!("wrote {rows} rows for {} enterprises to {}", data.panels.len(), a.out.display());
    Ok(0)
}

fn apply_graph_flags(cfg: &mut DataConfig, f: &GraphFlags) {
    if let Some(w) = f.window {
        cfg.window = w;
    }
    if let Some(k) = f.plus_k {
        cfg.plus_k = k;
        cfg.graph = GraphMode::TreePlus;
    }
    match f.graph {
        Some(GraphArg::Tree) => cfg.graph = GraphMode::Tree,
        Some(GraphArg::TreePlus) => cfg.graph = GraphMode::TreePlus,
        None => {}
    }
    cfg.abs_similarity |= f.abs_similarity;
    cfg.global_graph |= f.global_graph;
    if f.sme_quantile.is_some() {
        cfg.sme_quantile = f.sme_quantile;
    }
    if f.no_sme_filter {
        cfg.sme_quantile = None;
    }
}

fn check_quantile(cfg: &DataConfig) -> Result<()> {
    match cfg.sme_quantile {
        Some(q) if !(q > 0.0 && q < 1.0) => Err(usage(format!("--sme-quantile must be in (0, 1), got {q}"))),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct MapSummary {
    samples: usize,
    graph: GraphMode,
    plus_k: usize,
    edges_min: usize,
    edges_max: usize,
    format: &'static str,
}

pub fn map(a: &MapArgs) -> Result<u8> {
    let mut cfg = DataConfig::default();
    apply_graph_flags(&mut cfg, &a.graph);
    check_quantile(&cfg)?;
    let raw = load(&a.data)?;
    let graphs = pipeline::map_panels(raw, &cfg)?;

    let (format, ext, name) = match a.format {
        FormatArg::Dot => (ExportFormat::Dot, "dot", "dot"),
        FormatArg::EdgeJson => (ExportFormat::EdgeJson, "json", "edge-json"),
    };
    let graph_dir = a.out.join("graphs");
    create_dir(&graph_dir)?;
    let names = IndicatorSchema::default().names().to_vec();
    for (key, g) in &graphs {
        let path = graph_dir.join(format!("{}_{}.{ext}", key.enterprise_id, key.year));
        fs::write(&path, graph::export_graph(g, format, &names)?).with_context(|| format!("writing {}", path.display()))?;
    }
    let edge_counts = graphs.iter().map(|(_, g)| g.edges.len());
    let summary = MapSummary {
        samples: graphs.len(),
        graph: cfg.graph,
        plus_k: cfg.plus_k,
        edges_min: edge_counts.clone().min().unwrap_or(0),
        edges_max: edge_counts.max().unwrap_or(0),
        format: name,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    write_json(&a.out.join("run_config.json"), &json!({"command": "map", "data_path": a.data, "format": name, "data": cfg}))?;
    println!("mapped {} samples ({}-{} edges) into {}", summary.samples, summary.edges_min, summary.edges_max, graph_dir.display());
    Ok(0)
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Defaults, then the config file, then flags.
fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, a.seed);
    if a.out.is_some() {
        cfg.out = a.out.clone();
    }
    set(&mut cfg.data.num_classes, a.classes);
    apply_graph_flags(&mut cfg.data, &a.graph);
    set(&mut cfg.data.split_seed, a.split_seed);

    set(&mut cfg.model.pool_ratio, a.pool_ratio);
    set(&mut cfg.model.hidden_dim, a.hidden_dim);
    set(&mut cfg.model.mlp_hidden, a.mlp_hidden);
    cfg.model.l2_normalize |= a.l2_normalize;

    let t = &mut cfg.train;
    set(&mut t.epochs, a.epochs);
    set(&mut t.batch_size, a.batch_size);
    if let Some(o) = a.optimizer {
        t.optimizer = match o {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        };
    }
    set(&mut t.lr_max, a.lr_max);
    set(&mut t.lr_min, a.lr_min);
    set(&mut t.restart_period, a.t0);
    set(&mut t.restart_mult, a.t_mult);
    set(&mut t.momentum, a.momentum);
    set(&mut t.beta1, a.beta1);
    set(&mut t.beta2, a.beta2);
    set(&mut t.eps, a.adam_eps);
    set(&mut t.weight_decay, a.weight_decay);
    set(&mut t.early_stop_patience, a.patience);
    t.class_weights |= a.class_weights;

    let cfg = cfg.resolve();
    check_quantile(&cfg.data)?;
    // Files bypass the flag parser, so re-check what the flag restricts.
    if ![3, 5, 8].contains(&cfg.data.num_classes) {
        return Err(usage(format!("classes must be one of {{3, 5, 8}}, got {}", cfg.data.num_classes)));
    }
    cfg.data.validate().map_err(usage)?;
    cfg.model.validate().map_err(usage)?;
    cfg.train.validate().map_err(usage)?;
    Ok(cfg)
}

fn write_history(path: &Path, history: &[training::EpochRecord]) -> Result<()> {
    let mut buf = Vec::new();
    training::write_history_csv(&mut buf, history)?;
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

pub fn train(a: &TrainArgs) -> Result<u8> {
    let cfg = resolve_train_config(a)?;
    let out = cfg.out.clone().ok_or_else(|| usage("--out is required (or `out` in the config file)"))?;
    let raw = load(&a.data)?;
    create_dir(&out)?;
    write_json(&out.join("run_config.json"), &json!({"command": "train", "data_path": a.data, "config": cfg}))?;

    let outcome = pipeline::train(raw, &cfg.data, &cfg.model, &cfg.train)?;
    training::save_checkpoint(out.join("checkpoint.json"), &outcome.checkpoint)?;
    write_history(&out.join("history.csv"), &outcome.history)?;
    print!("trained {} epochs, best epoch {}", outcome.history.len(), outcome.best_epoch);
    match &outcome.validation {
        Some(v) => {
            metrics::export_metrics(&out, v)?;
            println!("; validation accuracy {:.4}, micro AUC {:.4}", v.report.accuracy, v.report.micro_auc);
        }
        None => println!("; no validation samples"),
    }
    Ok(0)
}

pub fn eval(a: &EvalArgs) -> Result<u8> {
    let ckpt = training::load_checkpoint(&a.checkpoint).with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let raw = load(&a.data)?;
    let (part, name) = match a.split {
        SplitArg::Train => (SplitPart::Train, "train"),
        SplitArg::Val => (SplitPart::Val, "val"),
        SplitArg::Test => (SplitPart::Test, "test"),
    };
    let evaluated = pipeline::evaluate_checkpoint(raw, &ckpt, part)?;
    metrics::export_metrics(&a.out, &evaluated)?;
    write_json(
        &a.out.join("run_config.json"),
        &json!({"command": "eval", "checkpoint": a.checkpoint, "data_path": a.data, "split": name}),
    )?;
    let r = &evaluated.report;
    println!("{name}: {} samples, accuracy {:.4}, micro AUC {:.4}", r.samples, r.accuracy, r.micro_auc);
    Ok(0)
}

#[derive(Serialize)]
struct OpRow {
    seed: u64,
    op: &'static str,
    max_rel_error: f64,
}

#[derive(Serialize)]
struct ModelRow {
    seed: u64,
    max_rel_error: f64,
    worst: Option<(String, usize)>,
    coordinates: usize,
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<u8> {
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(usage(format!("--eps must be positive, got {}", a.eps)));
    }
    if a.seeds == 0 {
        return Err(usage("--seeds must be >= 1"));
    }
    println!("eps = {:e}", a.eps);
    let mut ops = Vec::new();
    let mut models = Vec::new();
    for seed in a.seed..a.seed + a.seeds {
        for c in gradcheck::op_suite(seed, a.eps)? {
            println!("seed {seed}  {:<22} {:.3e}", c.op, c.max_rel_error);
            ops.push(OpRow { seed, op: c.op, max_rel_error: c.max_rel_error });
        }
        let m = gradcheck::model_check(seed, a.eps)?;
        println!("seed {seed}  {:<22} {:.3e}  ({} coordinates)", "full model", m.max_rel_error, m.coordinates);
        models.push(ModelRow { seed, max_rel_error: m.max_rel_error, worst: m.worst, coordinates: m.coordinates });
    }
    let errors = ops.iter().map(|o| o.max_rel_error).chain(models.iter().map(|m| m.max_rel_error));
    let passed = errors.clone().all(|e| e.is_finite() && e < GRADCHECK_TOLERANCE);
    let worst = errors.fold(0.0, |acc: f64, e| if acc.is_nan() || e.is_nan() { f64::NAN } else { acc.max(e) });
    println!("max relative error {worst:.3e}: {}", if passed { "pass" } else { "FAIL" });

    if let Some(out) = &a.out {
        create_dir(out)?;
        let report = json!({
            "eps": a.eps, "tolerance": GRADCHECK_TOLERANCE, "passed": passed,
            "max_rel_error": worst, "ops": ops, "model": models,
        });
        write_json(&out.join("gradcheck.json"), &report)?;
        write_json(&out.join("run_config.json"), &json!({"command": "gradcheck", "eps": a.eps, "seed": a.seed, "seeds": a.seeds}))?;
    }
    Ok(if passed { 0 } else { 3 })
}
