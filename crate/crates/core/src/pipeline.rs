//! End-to-end benchmark: generate, train both models, evaluate, route.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifact::{ModelArtifact, TrainedModel};
use crate::bnn::{BnnArchitecture, BnnModel, TrainConfig};
use crate::design_space::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_predictions, EvaluationReport, Predictions};
use crate::predictive::PredictOptions;
use crate::router::{evaluate_routing_with, RoutingMode, RoutingReport};
use crate::simulator::{self, Simulator};
use crate::svgp::{SvgpConfig, SvgpModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub bnn_hidden: Vec<usize>,
    pub bnn_dropout: f64,
    pub bnn_train: TrainConfig,
    pub svgp: SvgpConfig,
    pub mc_samples: usize,
    pub percentiles: Vec<f64>,
    pub routing_mode: RoutingMode,
    /// Seconds charged per routed simulation in the cost accounting.
    pub simulator_latency_s: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_train: 4000,
            n_test: 1000,
            bnn_hidden: vec![512, 512],
            bnn_dropout: 0.05,
            bnn_train: TrainConfig::default(),
            svgp: SvgpConfig::default(),
            mc_samples: 30,
            percentiles: vec![90.0, 80.0],
            routing_mode: RoutingMode::PerOutput,
            simulator_latency_s: 130.0,
        }
    }
}

impl BenchmarkConfig {
    /// Propagates `seed` into every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.bnn_train.seed = seed;
        self.svgp.seed = seed;
        self
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("train_design".to_string(), self.seed),
            ("test_design".to_string(), self.seed.wrapping_add(1)),
            ("bnn_init".to_string(), self.seed),
            ("bnn_train".to_string(), self.bnn_train.seed),
            ("svgp".to_string(), self.svgp.seed),
            ("mc_prediction".to_string(), self.seed),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub role: String,
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seeds: BTreeMap<String, u64>,
    pub config: BenchmarkConfig,
    pub files: Vec<ManifestEntry>,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    /// Wall-clock seconds per stage.
    pub timings_s: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Entries whose file content no longer matches the recorded hash.
    pub fn verify(&self, dir: impl AsRef<Path>) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for e in &self.files {
            if sha256_file(&dir.as_ref().join(&e.path))? != e.sha256 {
                bad.push(e.path.clone());
            }
        }
        Ok(bad)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything the benchmark produced, in memory.
#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub manifest: RunManifest,
    pub train: Dataset,
    pub test: Dataset,
    pub bnn: BnnModel,
    pub svgp: SvgpModel,
    pub bnn_report: EvaluationReport,
    pub svgp_report: EvaluationReport,
    pub bnn_routing: RoutingReport,
    pub svgp_routing: RoutingReport,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Runs the full pipeline and writes every artifact plus `manifest.json` into `out_dir`.
pub fn run_benchmark(config: &BenchmarkConfig, out_dir: &Path, progress: &dyn Fn(&str)) -> Result<BenchmarkOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let started = unix_now();
    let mut timings = BTreeMap::new();
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    progress("generating designs");
    let space = simulator::default_space();
    let sim = Simulator::default();
    let train = simulator::generate_dataset(&space, config.n_train, config.seed, &sim)?;
    let test = simulator::generate_dataset(&space, config.n_test, config.seed.wrapping_add(1), &sim)?;
    for (role, ds) in [("train_data", &train), ("test_data", &test)] {
        let p = out_dir.join(format!("{role}.csv"));
        ds.write_csv(&p)?;
        files.push((role.into(), p));
    }
    lap("generate", &mut timings);

    progress("training bnn");
    let arch = BnnArchitecture::new(train.n_inputs(), train.n_outputs())
        .with_hidden(config.bnn_hidden.clone())
        .with_dropout(config.bnn_dropout);
    let bnn = BnnModel::init(arch, config.seed)?.train(&train, &config.bnn_train)?;
    lap("train_bnn", &mut timings);

    progress("training svgp");
    let svgp = SvgpModel::train(&train, &config.svgp)?;
    lap("train_svgp", &mut timings);

    for (role, model) in [
        ("bnn_model", TrainedModel::Bnn(bnn.clone())),
        ("svgp_model", TrainedModel::Svgp(svgp.clone())),
    ] {
        let p = out_dir.join(format!("{role}.json"));
        ModelArtifact::new(model, Some(space.clone())).save(&p)?;
        files.push((role.into(), p));
    }

    progress("evaluating");
    let opts = PredictOptions {
        mc_samples: config.mc_samples,
        seed: config.seed,
    };
    let mut reports = Vec::new();
    for (name, model) in [("bnn", &bnn as &dyn crate::Surrogate), ("svgp", &svgp)] {
        let preds = Predictions::compute(model, &test, &opts)?;
        let eval = evaluate_predictions(model, &test, &preds, &opts)?;
        let routing = evaluate_routing_with(
            model,
            &test,
            &preds,
            &config.percentiles,
            config.routing_mode,
            config.simulator_latency_s,
        )?;
        let p = out_dir.join(format!("{name}_evaluation.json"));
        eval.write_json(&p)?;
        files.push((format!("{name}_evaluation"), p));
        for csv in eval.write_csvs(out_dir, name)? {
            let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            files.push((stem, csv));
        }
        let p = out_dir.join(format!("{name}_routing.json"));
        routing.write_json(&p)?;
        files.push((format!("{name}_routing"), p));
        reports.push((eval, routing));
    }
    lap("evaluate", &mut timings);

    let mut entries = Vec::with_capacity(files.len());
    for (role, path) in files {
        let bytes = std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
        entries.push(ManifestEntry {
            role,
            path: path
                .strip_prefix(out_dir)
                .unwrap_or(&path)
                .to_string_lossy()
                .into_owned(),
            sha256: sha256_file(&path)?,
            bytes,
        });
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seeds: config.seeds(),
        config: config.clone(),
        files: entries,
        started_unix_s: started,
        finished_unix_s: unix_now(),
        timings_s: timings,
    };
    let mp = out_dir.join(MANIFEST_FILE);
    std::fs::write(&mp, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mp, e))?;

    let (svgp_report, svgp_routing) = reports.pop().expect("two models");
    let (bnn_report, bnn_routing) = reports.pop().expect("two models");
    Ok(BenchmarkOutcome {
        manifest,
        train,
        test,
        bnn,
        svgp,
        bnn_report,
        svgp_report,
        bnn_routing,
        svgp_routing,
    })
}
