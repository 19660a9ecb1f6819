//! `corpgraph`: synthesize indicator panels, map them to indicator graphs,
//! train and evaluate the graph classifier, and check gradients.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(e: impl fmt::Display) -> anyhow::Error {
    anyhow::Error::new(UsageError(format!("{e:#}")))
}

#[derive(Parser, Debug)]
#[command(name = "corpgraph", version, about = "Indicator-graph credit rating classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic labeled panel and its latent-quality sidecar.
    Synth(SynthArgs),
    /// Export the indicator graph of every enterprise-year.
    Map(MapArgs),
    /// Train a classifier and report validation metrics.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on one part of its split.
    Eval(EvalArgs),
    /// Finite-difference check of every op and of the full model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub years: usize,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; the sidecar goes next to it as `<stem>.truth.csv`.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GraphArg {
    Tree,
    TreePlus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Dot,
    EdgeJson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

/// Graph-construction flags shared by `map` and `train`.
#[derive(Args, Debug, Default)]
pub struct GraphFlags {
    /// Years of history per sample.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_enum)]
    pub graph: Option<GraphArg>,
    /// Extra edges of the tree-plus graph; implies `--graph tree-plus` when
    /// `--graph` is not given.
    #[arg(long)]
    pub plus_k: Option<usize>,
    /// Build trees on |similarity|.
    #[arg(long)]
    pub abs_similarity: bool,
    /// One graph from all training rows instead of one per sample.
    #[arg(long)]
    pub global_graph: bool,
    /// Drop enterprises whose mean total assets exceed this quantile (default 0.8).
    #[arg(long, conflicts_with = "no_sme_filter")]
    pub sme_quantile: Option<f64>,
    #[arg(long)]
    pub no_sme_filter: bool,
}

#[derive(Args, Debug)]
pub struct MapArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub graph: GraphFlags,
    #[arg(long, value_enum, default_value = "edge-json")]
    pub format: FormatArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// TOML or JSON run configuration; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = PossibleValuesParser::new(["3", "5", "8"]).map(|s| s.parse::<usize>().unwrap()))]
    pub classes: Option<usize>,
    #[command(flatten)]
    pub graph: GraphFlags,
    #[arg(long)]
    pub split_seed: Option<u64>,

    #[arg(long)]
    pub pool_ratio: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    /// Normalize GraphSAGE outputs to unit rows.
    #[arg(long)]
    pub l2_normalize: bool,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    /// First warm-restart cycle length, in epochs.
    #[arg(long)]
    pub t0: Option<f64>,
    /// Cycle length multiplier.
    #[arg(long)]
    pub t_mult: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Weight the loss by inverse class frequency.
    #[arg(long)]
    pub class_weights: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to check, starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Directory for `gradcheck.json` and `run_config.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match e.downcast_ref::<corpgraph::Error>() {
        Some(err) if err.is_numerical() => 3,
        Some(corpgraph::Error::InvalidArgument(_) | corpgraph::Error::UnknownFormat(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Map(a) => commands::map(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
