//! Uncertainty thresholding and simulator fallback.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design_space::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{percent_errors, DiscardMetric, Predictions};
use crate::predictive::{PredictOptions, PredictiveDistribution, Surrogate};
use crate::simulator::{SimOutputs, Simulator};
use crate::stats::percentile;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Route when any output's σ exceeds its threshold.
    AnyOutput,
    /// Route on one named output only.
    SpecificOutput(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub output_names: Vec<String>,
    /// Per-output σ thresholds in original units.
    pub thresholds: Vec<f64>,
    pub percentile: f64,
    pub aggregation: Aggregation,
}

/// Fits per-output thresholds at `pct` of the reference σ values
/// (`sigmas[o]` holds output `o`).
pub fn fit_threshold(output_names: &[String], sigmas: &[Vec<f64>], pct: f64) -> Result<ThresholdPolicy> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::InvalidArgument(format!("percentile {pct} outside (0, 100]")));
    }
    if sigmas.len() != output_names.len() {
        return Err(Error::DimensionMismatch {
            context: "threshold outputs",
            expected: output_names.len(),
            got: sigmas.len(),
        });
    }
    let thresholds = sigmas
        .iter()
        .map(|s| {
            if s.is_empty() {
                Err(Error::InsufficientData { needed: 1, got: 0 })
            } else {
                percentile(s, pct)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ThresholdPolicy {
        output_names: output_names.to_vec(),
        thresholds,
        percentile: pct,
        aggregation: Aggregation::AnyOutput,
    })
}

impl ThresholdPolicy {
    /// Same thresholds for every output, mainly for tests and demos.
    pub fn uniform(output_names: &[String], threshold: f64) -> Self {
        Self {
            output_names: output_names.to_vec(),
            thresholds: vec![threshold; output_names.len()],
            percentile: 100.0,
            aggregation: Aggregation::AnyOutput,
        }
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Result<Self> {
        if let Aggregation::SpecificOutput(name) = &aggregation {
            if !self.output_names.contains(name) {
                return Err(Error::InvalidArgument(format!("unknown output `{name}`")));
            }
        }
        self.aggregation = aggregation;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.len() != self.output_names.len() {
            return Err(Error::DimensionMismatch {
                context: "policy thresholds",
                expected: self.output_names.len(),
                got: self.thresholds.len(),
            });
        }
        if self.thresholds.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::InvalidArgument("thresholds must be non-negative".into()));
        }
        Ok(())
    }

    /// Outputs whose σ strictly exceeds the threshold and are monitored.
    pub fn triggering(&self, std: &[f64]) -> Vec<usize> {
        (0..self.thresholds.len())
            .filter(|&o| match &self.aggregation {
                Aggregation::AnyOutput => true,
                Aggregation::SpecificOutput(name) => &self.output_names[o] == name,
            })
            .filter(|&o| std[o] > self.thresholds[o])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SimulationStatus {
    NotRequired,
    /// Routed, but no simulator is attached.
    Pending,
    Done { outputs: SimOutputs },
    /// The simulator failed; the surrogate estimate stands.
    Degraded { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub estimate: PredictiveDistribution,
    pub routed: bool,
    pub triggering_outputs: Vec<String>,
    pub simulation: SimulationStatus,
}

/// Decides for one design and, when routed, queries `simulator` if given.
pub fn route(
    policy: &ThresholdPolicy,
    model: &dyn Surrogate,
    x: &[f64],
    simulator: Option<&Simulator>,
    opts: &PredictOptions,
) -> Result<RoutingDecision> {
    if policy.thresholds.len() != model.n_outputs() {
        return Err(Error::DimensionMismatch {
            context: "policy vs. model outputs",
            expected: model.n_outputs(),
            got: policy.thresholds.len(),
        });
    }
    let estimate = model.predict_one(x, opts)?;
    Ok(decide(policy, estimate, x, simulator))
}

pub fn decide(
    policy: &ThresholdPolicy,
    estimate: PredictiveDistribution,
    x: &[f64],
    simulator: Option<&Simulator>,
) -> RoutingDecision {
    let triggers = policy.triggering(&estimate.std());
    let routed = !triggers.is_empty();
    let simulation = match (routed, simulator) {
        (false, _) => SimulationStatus::NotRequired,
        (true, None) => SimulationStatus::Pending,
        (true, Some(sim)) => match crate::simulator::BuildingParams::from_slice(x).and_then(|p| sim.run(&p)) {
            Ok(outputs) => SimulationStatus::Done { outputs },
            Err(e) => SimulationStatus::Degraded { message: e.to_string() },
        },
    };
    RoutingDecision {
        estimate,
        routed,
        triggering_outputs: triggers.iter().map(|&o| policy.output_names[o].clone()).collect(),
        simulation,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    /// One routing set for all outputs (any output exceeds).
    AnyOutput,
    /// Each output's metrics use routing on that output alone.
    PerOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRouting {
    pub output: String,
    pub routed: usize,
    pub mape_full: f64,
    pub mape_after: f64,
    /// `None` when the full-set metric is zero.
    pub mape_reduction: Option<f64>,
    pub ape90_full: f64,
    pub ape90_after: f64,
    pub ape90_reduction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingLevel {
    pub percentile: f64,
    pub thresholds: Vec<f64>,
    /// Samples routed under any-output aggregation.
    pub routed_count: usize,
    pub fraction_routed: f64,
    /// `routed_count × simulator latency`.
    pub simulated_time_s: f64,
    pub outputs: Vec<OutputRouting>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub model_id: String,
    pub n_test: usize,
    pub mode: RoutingMode,
    pub levels: Vec<RoutingLevel>,
    pub note: String,
}

fn relative_reduction(full: f64, after: f64) -> Option<f64> {
    (full != 0.0).then(|| (full - after) / full)
}

/// Metrics before and after routing the samples above each percentile
/// threshold, with thresholds fitted on the same predictions.
pub fn evaluate_routing(
    model: &dyn Surrogate,
    test: &Dataset,
    percentiles: &[f64],
    mode: RoutingMode,
    simulator_latency_s: f64,
    opts: &PredictOptions,
) -> Result<RoutingReport> {
    let preds = Predictions::compute(model, test, opts)?;
    evaluate_routing_with(model, test, &preds, percentiles, mode, simulator_latency_s)
}

pub fn evaluate_routing_with(
    model: &dyn Surrogate,
    test: &Dataset,
    preds: &Predictions,
    percentiles: &[f64],
    mode: RoutingMode,
    simulator_latency_s: f64,
) -> Result<RoutingReport> {
    let n = test.len();
    if preds.preds.len() != n {
        return Err(Error::DimensionMismatch {
            context: "predictions vs. test rows",
            expected: n,
            got: preds.preds.len(),
        });
    }
    let n_out = preds.output_names.len();
    let sigmas: Vec<Vec<f64>> = (0..n_out).map(|o| preds.stds(o)).collect();
    let mut levels = Vec::with_capacity(percentiles.len());
    for &pct in percentiles {
        let policy = fit_threshold(&preds.output_names, &sigmas, pct)?;
        let any: Vec<bool> = (0..n)
            .map(|i| (0..n_out).any(|o| sigmas[o][i] > policy.thresholds[o]))
            .collect();
        let routed_count = any.iter().filter(|r| **r).count();
        let mut outputs = Vec::with_capacity(n_out);
        for o in 0..n_out {
            let routed: Vec<bool> = match mode {
                RoutingMode::AnyOutput => any.clone(),
                RoutingMode::PerOutput => (0..n).map(|i| sigmas[o][i] > policy.thresholds[o]).collect(),
            };
            let y = test.y.column(o).to_vec();
            let y_hat = preds.means(o);
            let full = percent_errors(&y, &y_hat)?.values;
            let keep: Vec<usize> = (0..n).filter(|&i| !routed[i]).collect();
            let ky: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
            let kh: Vec<f64> = keep.iter().map(|&i| y_hat[i]).collect();
            let after = if keep.len() >= 2 {
                percent_errors(&ky, &kh)?.values
            } else {
                return Err(Error::InsufficientData { needed: 2, got: keep.len() });
            };
            let (mf, ma) = (DiscardMetric::Mape.apply(&full), DiscardMetric::Mape.apply(&after));
            let (af, aa) = (DiscardMetric::Ape90.apply(&full), DiscardMetric::Ape90.apply(&after));
            outputs.push(OutputRouting {
                output: preds.output_names[o].clone(),
                routed: n - keep.len(),
                mape_full: mf,
                mape_after: ma,
                mape_reduction: relative_reduction(mf, ma),
                ape90_full: af,
                ape90_after: aa,
                ape90_reduction: relative_reduction(af, aa),
            });
        }
        levels.push(RoutingLevel {
            percentile: pct,
            thresholds: policy.thresholds,
            routed_count,
            fraction_routed: routed_count as f64 / n as f64,
            simulated_time_s: routed_count as f64 * simulator_latency_s,
            outputs,
        });
    }
    Ok(RoutingReport {
        model_id: model.model_id(),
        n_test: n,
        mode,
        levels,
        note: "thresholds fitted on the evaluated predictions; optimistic relative to a separate validation split"
            .into(),
    })
}

impl RoutingReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}
