//! Argument definitions and subcommand handlers.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use surrogate_core::bnn::{cross_validate, CvGrid};
use surrogate_core::evaluation::{evaluate_predictions, Predictions};
use surrogate_core::optim::AdamConfig;
use surrogate_core::pipeline::{run_benchmark, BenchmarkConfig};
use surrogate_core::router::{self, evaluate_routing_with, fit_threshold, RoutingMode};
use surrogate_core::simulator::{self, Simulator};
use surrogate_core::svgp::InducingInit;
use surrogate_core::{
    BnnArchitecture, BnnModel, DesignSpace, Error, KernelKind, ModelArtifact, PredictOptions, Surrogate, SvgpConfig,
    SvgpModel, ThresholdPolicy, TrainConfig, TrainedModel,
};

use crate::data::{read_dataset, write_dataset};
use crate::service::{self, AppState, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "surrogate", version, about = "Uncertainty-aware surrogate models for building simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a Latin-hypercube design and simulate it.
    Generate(GenerateArgs),
    /// Train a surrogate.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Cross-validate network architectures.
    #[command(subcommand)]
    Crossval(CrossvalCommand),
    /// Accuracy, calibration and discard-ranking report.
    Evaluate(EvaluateArgs),
    /// Error reduction from routing uncertain samples to the simulator.
    EvaluateRouting(RoutingArgs),
    /// Route a single design point.
    Route(RouteArgs),
    /// Full pipeline: generate, train both models, evaluate, route.
    Benchmark(BenchmarkArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Design-space file (JSON or `name lower upper [unit]` lines); defaults to the built-in space.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum TrainCommand {
    Bnn(TrainBnnArgs),
    Svgp(TrainSvgpArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Input column count for CSVs without a metadata sidecar.
    #[arg(long)]
    pub n_inputs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainBnnArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub step_size: f64,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "512,512")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub dropout: f64,
    #[arg(long)]
    pub input_dropout: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KernelArg {
    Matern32,
    SquaredExponential,
}

impl From<KernelArg> for KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Matern32 => KernelKind::Matern32,
            KernelArg::SquaredExponential => KernelKind::SquaredExponential,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InducingArg {
    Random,
    Kmeans,
}

#[derive(Debug, Args)]
pub struct TrainSvgpArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub inducing: usize,
    #[arg(long, value_enum, default_value_t = InducingArg::Random)]
    pub inducing_init: InducingArg,
    #[arg(long, value_enum, default_value_t = KernelArg::Matern32)]
    pub kernel: KernelArg,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum CrossvalCommand {
    Bnn(CrossvalBnnArgs),
}

#[derive(Debug, Args)]
pub struct CrossvalBnnArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub layers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024")]
    pub neurons: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2")]
    pub dropout: Vec<f64>,
    #[arg(long, default_value_t = 1200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 30)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// JSON report path; printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalCommon {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    /// JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write accuracy, calibration and discard CSVs into this directory.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    PerOutput,
    AnyOutput,
}

#[derive(Debug, Args)]
pub struct RoutingArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    #[arg(long, value_delimiter = ',', default_value = "90,80")]
    pub percentiles: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::PerOutput)]
    pub mode: ModeArg,
    /// Seconds charged per simulation in the cost summary.
    #[arg(long, default_value_t = 130.0)]
    pub latency_s: f64,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Store a threshold policy fitted at this percentile into the model artifact.
    #[arg(long)]
    pub attach_policy: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Design point as `name=value` pairs, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_pair, required = true)]
    pub inputs: Vec<(String, f64)>,
    /// Uniform σ threshold, overriding any policy stored in the artifact.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Run the simulator when routed.
    #[arg(long)]
    pub simulate: bool,
    #[arg(long, default_value_t = 30)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn parse_pair(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v = v.trim().parse::<f64>().map_err(|e| format!("`{k}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "benchmark_out")]
    pub out: PathBuf,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub svgp_steps: Option<usize>,
    #[arg(long)]
    pub inducing: Option<usize>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, default_value_t = 0)]
    pub simulate_latency_ms: u64,
    /// Simulations slower than this return a job id instead of blocking.
    #[arg(long, default_value_t = 100)]
    pub async_threshold_ms: u64,
    /// Fixed MC seed for reproducible responses (fresh entropy otherwise).
    #[arg(long)]
    pub fixed_seed: Option<u64>,
    #[arg(long, default_value_t = 30)]
    pub mc_samples: usize,
    /// Uniform σ threshold when the artifact has no stored policy.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub cors_origin: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    #[arg(long, default_value_t = 1024)]
    pub max_jobs: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(TrainCommand::Bnn(a)) => train_bnn(a),
        Command::Train(TrainCommand::Svgp(a)) => train_svgp(a),
        Command::Crossval(CrossvalCommand::Bnn(a)) => crossval_bnn(a),
        Command::Evaluate(a) => evaluate(a),
        Command::EvaluateRouting(a) => evaluate_routing(a),
        Command::Route(a) => route(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Serve(a) => serve(a),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let space = match &a.space {
        Some(p) => DesignSpace::load(p)?,
        None => simulator::default_space(),
    };
    let ds = simulator::generate_dataset(&space, a.n, a.seed, &Simulator::default())?;
    write_dataset(&ds, &a.out, Some(a.seed))?;
    eprintln!("wrote {} samples to {}", ds.len(), a.out.display());
    Ok(())
}

fn train_bnn(a: TrainBnnArgs) -> Result<()> {
    let ds = read_dataset(&a.data.data, a.data.n_inputs)?;
    let mut arch = BnnArchitecture::new(ds.n_inputs(), ds.n_outputs())
        .with_hidden(a.hidden)
        .with_dropout(a.dropout);
    arch.input_dropout = a.input_dropout;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        adam: AdamConfig {
            step_size: a.step_size,
            ..AdamConfig::default()
        },
        seed: a.seed,
    };
    let model = BnnModel::init(arch, a.seed)?.train(&ds, &cfg)?;
    if let (Some(first), Some(last)) = (model.training_log.first(), model.training_log.last()) {
        eprintln!("loss {first:.5} -> {last:.5} over {} epochs", model.training_log.len());
    }
    ModelArtifact::new(TrainedModel::Bnn(model), ds.space.clone()).save(&a.out)?;
    Ok(())
}

fn train_svgp(a: TrainSvgpArgs) -> Result<()> {
    let ds = read_dataset(&a.data.data, a.data.n_inputs)?;
    let defaults = SvgpConfig::default();
    let cfg = SvgpConfig {
        kernel: a.kernel.into(),
        n_inducing: a.inducing,
        inducing_init: match a.inducing_init {
            InducingArg::Random => InducingInit::RandomSubset,
            InducingArg::Kmeans => InducingInit::Kmeans,
        },
        steps: a.steps.unwrap_or(defaults.steps),
        batch_size: a.batch_size,
        adam: AdamConfig {
            step_size: a.step_size.unwrap_or(defaults.adam.step_size),
            ..defaults.adam
        },
        seed: a.seed,
        ..defaults
    };
    let model = SvgpModel::train(&ds, &cfg)?;
    ModelArtifact::new(TrainedModel::Svgp(model), ds.space.clone()).save(&a.out)?;
    Ok(())
}

fn crossval_bnn(a: CrossvalBnnArgs) -> Result<()> {
    let ds = read_dataset(&a.data.data, a.data.n_inputs)?;
    let grid = CvGrid {
        n_layers: a.layers,
        n_neurons: a.neurons,
        dropout: a.dropout,
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let result = cross_validate(&ds, &grid, a.folds, &cfg, a.mc_samples, a.seed)?;
    for row in &result.table {
        println!("{:?} p={:.2} mean_r2={:.4}", row.hidden_layers, row.dropout_p, row.mean_r2);
    }
    println!("best: {:?} p={}", result.best.hidden_layers, result.best.dropout_p);
    if let Some(p) = &a.report {
        write_json(p, &result)?;
    }
    Ok(())
}

/// Loads a model and a test set and checks that their columns agree.
fn load_pair(c: &EvalCommon) -> Result<(ModelArtifact, surrogate_core::Dataset, PredictOptions)> {
    let model = ModelArtifact::load(&c.model)?;
    let test = read_dataset(&c.test, Some(model.n_inputs()))?;
    if test.n_inputs() != model.n_inputs() {
        return Err(Error::DimensionMismatch {
            context: "model inputs vs. test columns",
            expected: model.n_inputs(),
            got: test.n_inputs(),
        }
        .into());
    }
    if test.n_outputs() != model.n_outputs() {
        return Err(Error::DimensionMismatch {
            context: "model outputs vs. test columns",
            expected: model.n_outputs(),
            got: test.n_outputs(),
        }
        .into());
    }
    let opts = PredictOptions {
        mc_samples: c.mc_samples,
        seed: c.seed,
    };
    Ok((model, test, opts))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (model, test, opts) = load_pair(&a.common)?;
    let preds = Predictions::compute(&model, &test, &opts)?;
    let report = evaluate_predictions(&model, &test, &preds, &opts)?;
    println!("{}", report.summary_table());
    if let Some(p) = &a.report {
        report.write_json(p)?;
    }
    if let Some(dir) = &a.csv_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        report.write_csvs(dir, model.kind())?;
    }
    Ok(())
}

fn evaluate_routing(a: RoutingArgs) -> Result<()> {
    let (mut model, test, opts) = load_pair(&a.common)?;
    let preds = Predictions::compute(&model, &test, &opts)?;
    let mode = match a.mode {
        ModeArg::PerOutput => RoutingMode::PerOutput,
        ModeArg::AnyOutput => RoutingMode::AnyOutput,
    };
    let report = evaluate_routing_with(&model, &test, &preds, &a.percentiles, mode, a.latency_s)?;
    for level in &report.levels {
        println!(
            "p{}: routed {} ({:.1}%), simulated {:.0} s",
            level.percentile,
            level.routed_count,
            100.0 * level.fraction_routed,
            level.simulated_time_s
        );
        for o in &level.outputs {
            println!(
                "  {:<16} APE90 {:.3} -> {:.3}  MAPE {:.3} -> {:.3}",
                o.output, o.ape90_full, o.ape90_after, o.mape_full, o.mape_after
            );
        }
    }
    if let Some(p) = &a.report {
        report.write_json(p)?;
    }
    if let Some(pct) = a.attach_policy {
        model.threshold_policy = Some(fit_threshold(
            model.output_names(),
            &(0..model.n_outputs()).map(|o| preds.stds(o)).collect::<Vec<_>>(),
            pct,
        )?);
        model.save(&a.common.model)?;
        eprintln!("stored p{pct} threshold policy in {}", a.common.model.display());
    }
    Ok(())
}

fn route(a: RouteArgs) -> Result<()> {
    let model = ModelArtifact::load(&a.model)?;
    let names = model.input_names();
    let mut x = Vec::with_capacity(names.len());
    for name in names {
        let v = a
            .inputs
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::InvalidArgument(format!("missing input `{name}`")))?;
        x.push(v);
    }
    if let Some((k, _)) = a.inputs.iter().find(|(k, _)| !names.contains(k)) {
        bail!(Error::InvalidArgument(format!("unknown input `{k}`")));
    }
    if let Some(space) = &model.design_space {
        space.check_point(&x)?;
    }
    let policy = match (a.threshold, &model.threshold_policy) {
        (Some(t), _) => ThresholdPolicy::uniform(model.output_names(), t),
        (None, Some(p)) => p.clone(),
        (None, None) => bail!(Error::InvalidArgument(
            "artifact has no threshold policy; pass --threshold".into()
        )),
    };
    let sim = Simulator::default();
    let opts = PredictOptions {
        mc_samples: a.mc_samples,
        seed: a.seed,
    };
    let decision = router::route(&policy, &model, &x, a.simulate.then_some(&sim), &opts)?;
    println!("{}", serde_json::to_string_pretty(&decision)?);
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let mut cfg = BenchmarkConfig::default();
    if let Some(n) = a.n_train {
        cfg.n_train = n;
    }
    if let Some(n) = a.n_test {
        cfg.n_test = n;
    }
    if let Some(e) = a.epochs {
        cfg.bnn_train.epochs = e;
    }
    if let Some(h) = a.hidden {
        cfg.bnn_hidden = h;
    }
    if let Some(s) = a.svgp_steps {
        cfg.svgp.steps = s;
    }
    if let Some(m) = a.inducing {
        cfg.svgp.n_inducing = m;
    }
    if let Some(t) = a.mc_samples {
        cfg.mc_samples = t;
    }
    let cfg = cfg.with_seed(a.seed);
    let out = run_benchmark(&cfg, &a.out, &|stage| eprintln!("{stage}"))?;
    println!("{}", out.bnn_report.summary_table());
    println!("{}", out.svgp_report.summary_table());
    println!("manifest: {}", a.out.join(surrogate_core::pipeline::MANIFEST_FILE).display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let model = a.model.as_ref().map(ModelArtifact::load).transpose()?;
    let config = ServiceConfig {
        simulate_latency: Duration::from_millis(a.simulate_latency_ms),
        async_threshold: Duration::from_millis(a.async_threshold_ms),
        mc_samples: a.mc_samples,
        fixed_seed: a.fixed_seed,
        max_jobs: a.max_jobs,
        workers: a.workers,
        cors_origin: a.cors_origin,
        threshold: a.threshold,
    };
    let state = Arc::new(AppState::new(model, config));
    tokio::runtime::Runtime::new()?.block_on(service::serve(state, a.addr))
}
