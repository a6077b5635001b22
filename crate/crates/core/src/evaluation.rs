//! Accuracy, calibration and discard-ranking metrics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::Dataset;
use crate::error::{Error, Result};
use crate::predictive::{PredictOptions, PredictiveDistribution, Surrogate};
use crate::stats::{mean, normal_quantile, percentile, percentile_sorted, variance};
use crate::transforms::BoxCoxParams;

pub const SHARPNESS_DEFINITION: &str = "population variance of predicted standard deviations, original units";
pub const RANDOM_RESAMPLES: usize = 200;

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::DimensionMismatch {
            context: "targets vs. predictions",
            expected: y.len(),
            got: y_hat.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: y.len() });
    }
    Ok(())
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let m = mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidArgument("R² undefined for constant targets".into()));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Absolute percentage errors `|y − ŷ| / |y| · 100` with zero targets excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentErrors {
    pub values: Vec<f64>,
    /// Row index of each value.
    pub rows: Vec<usize>,
    pub excluded_zeros: usize,
}

pub fn percent_errors(y: &[f64], y_hat: &[f64]) -> Result<PercentErrors> {
    check_pair(y, y_hat)?;
    let mut values = Vec::with_capacity(y.len());
    let mut rows = Vec::with_capacity(y.len());
    for (i, (a, b)) in y.iter().zip(y_hat).enumerate() {
        if *a != 0.0 {
            values.push((a - b).abs() / a.abs() * 100.0);
            rows.push(i);
        }
    }
    if values.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(PercentErrors {
        excluded_zeros: y.len() - values.len(),
        values,
        rows,
    })
}

/// Mean absolute percentage error, in percent.
pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    Ok(mean(&percent_errors(y, y_hat)?.values))
}

/// `q`-th percentile of absolute percentage errors, in percent.
pub fn ape_percentile(y: &[f64], y_hat: &[f64], q: f64) -> Result<f64> {
    percentile(&percent_errors(y, y_hat)?.values, q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputAccuracy {
    pub output: String,
    pub r2: f64,
    pub mape: f64,
    pub ape90: f64,
    /// Rows entering the percentage metrics.
    pub n_used: usize,
    pub excluded_zeros: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub model_id: String,
    pub n_test: usize,
    pub outputs: Vec<OutputAccuracy>,
}

pub fn default_levels() -> Vec<f64> {
    (1..20).map(|k| k as f64 * 0.05).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    /// Output name, or `"pooled"`.
    pub output: String,
    pub levels: Vec<f64>,
    /// Fraction of observations with `y ≤ F⁻¹(p)`.
    pub observed: Vec<f64>,
    /// Fraction inside the central `p` interval (presentation view).
    pub centered_observed: Vec<f64>,
    pub auc_error: f64,
    /// Absent on the pooled curve, whose outputs have different units.
    pub sharpness: Option<f64>,
    pub mean_std: Option<f64>,
}

impl CalibrationCurve {
    /// Standard deviation of predicted σ relative to its mean.
    pub fn std_dispersion(&self) -> Option<f64> {
        match (self.sharpness, self.mean_std) {
            (Some(s), Some(m)) if m > 0.0 => Some(s.sqrt() / m),
            _ => None,
        }
    }
}

/// Position of one observation relative to its predictive Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Standardized {
    /// `(y − μ)/σ`, `−∞` when the event holds at every level.
    u: f64,
    exact: bool,
}

fn standardize_obs(
    pred: &PredictiveDistribution,
    output: usize,
    y: f64,
    transform: Option<&BoxCoxParams>,
) -> Standardized {
    let (t, mu, var) = match (&pred.latent, transform) {
        (Some(lat), Some(tr)) => match tr.forward(output, y) {
            Ok(t) => (t, lat.mean[output], lat.variance[output]),
            // below the transform's image: below every quantile
            Err(_) => {
                return Standardized {
                    u: f64::NEG_INFINITY,
                    exact: false,
                }
            }
        },
        _ => (y, pred.mean[output], pred.variance[output]),
    };
    let sd = var.max(0.0).sqrt();
    if sd > 0.0 {
        Standardized {
            u: (t - mu) / sd,
            exact: false,
        }
    } else {
        Standardized {
            u: if t <= mu { f64::NEG_INFINITY } else { f64::INFINITY },
            exact: t == mu,
        }
    }
}

fn curve_from(output: String, obs: &[Standardized], levels: &[f64], sds: Option<&[f64]>) -> Result<CalibrationCurve> {
    if obs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if levels.is_empty() || levels.windows(2).any(|w| w[1] <= w[0]) || levels.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::InvalidArgument(
            "calibration levels must be strictly increasing within (0, 1)".into(),
        ));
    }
    let n = obs.len() as f64;
    let mut observed = Vec::with_capacity(levels.len());
    let mut centered = Vec::with_capacity(levels.len());
    for &p in levels {
        let z = normal_quantile(p);
        observed.push(obs.iter().filter(|o| o.u <= z).count() as f64 / n);
        let half = normal_quantile(0.5 + p / 2.0);
        centered.push(obs.iter().filter(|o| o.exact || o.u.abs() <= half).count() as f64 / n);
    }
    let auc_error = observed.iter().zip(levels).map(|(o, p)| (o - p).abs()).sum::<f64>() / levels.len() as f64;
    Ok(CalibrationCurve {
        output,
        levels: levels.to_vec(),
        observed,
        centered_observed: centered,
        auc_error,
        sharpness: sds.map(variance),
        mean_std: sds.map(mean),
    })
}

/// Calibration curve of one output.
pub fn calibration_curve(
    preds: &[PredictiveDistribution],
    y_true: &[f64],
    output: usize,
    name: &str,
    transform: Option<&BoxCoxParams>,
    levels: &[f64],
) -> Result<CalibrationCurve> {
    if preds.len() != y_true.len() {
        return Err(Error::DimensionMismatch {
            context: "predictions vs. targets",
            expected: preds.len(),
            got: y_true.len(),
        });
    }
    let obs: Vec<Standardized> = preds
        .iter()
        .zip(y_true)
        .map(|(p, y)| standardize_obs(p, output, *y, transform))
        .collect();
    let sds: Vec<f64> = preds.iter().map(|p| p.variance[output].max(0.0).sqrt()).collect();
    curve_from(name.to_string(), &obs, levels, Some(&sds))
}

/// One curve over the observations of all outputs together.
pub fn pooled_calibration_curve(
    preds: &[PredictiveDistribution],
    y_true: &ArrayView2<f64>,
    transform: Option<&BoxCoxParams>,
    levels: &[f64],
) -> Result<CalibrationCurve> {
    if preds.len() != y_true.nrows() {
        return Err(Error::DimensionMismatch {
            context: "predictions vs. targets",
            expected: preds.len(),
            got: y_true.nrows(),
        });
    }
    let mut obs = Vec::with_capacity(y_true.len());
    for (p, row) in preds.iter().zip(y_true.outer_iter()) {
        for (o, y) in row.iter().enumerate() {
            obs.push(standardize_obs(p, o, *y, transform));
        }
    }
    curve_from("pooled".into(), &obs, levels, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscardMetric {
    Mape,
    Ape90,
}

impl DiscardMetric {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mape => "mape",
            Self::Ape90 => "ape90",
        }
    }

    /// Metric over a set of absolute percentage errors.
    pub fn apply(self, errors: &[f64]) -> f64 {
        match self {
            Self::Mape => mean(errors),
            Self::Ape90 => {
                let mut v = errors.to_vec();
                v.sort_by(f64::total_cmp);
                percentile_sorted(&v, 90.0)
            }
        }
    }
}

pub fn default_fractions() -> Vec<f64> {
    (0..=10).map(|k| 1.0 - k as f64 * 0.05).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscardCurve {
    pub output: String,
    pub metric: DiscardMetric,
    pub retained_fractions: Vec<f64>,
    pub error_by_uncertainty: Vec<f64>,
    pub error_by_oracle: Vec<f64>,
    /// Mean over random retained subsets.
    pub error_random: Vec<f64>,
    /// 5th and 95th percentiles of the random-subset metric.
    pub random_lower: Vec<f64>,
    pub random_upper: Vec<f64>,
}

fn retained_count(n: usize, f: f64) -> Result<usize> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::InvalidArgument(format!("retained fraction {f} outside (0, 1]")));
    }
    // guard against 0.9 * 1000 = 899.999...
    let k = (f * n as f64 + 1e-9).floor() as usize;
    if k == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(k.min(n))
}

/// Indices ordered by ascending key, ties by index.
fn ascending(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    idx
}

/// Metric on the retained samples as the most uncertain are discarded.
pub fn discard_curve(
    output: &str,
    errors: &[f64],
    uncertainties: &[f64],
    fractions: &[f64],
    metric: DiscardMetric,
    seed: u64,
) -> Result<DiscardCurve> {
    if errors.len() != uncertainties.len() {
        return Err(Error::DimensionMismatch {
            context: "errors vs. uncertainties",
            expected: errors.len(),
            got: uncertainties.len(),
        });
    }
    if errors.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::InvalidArgument("errors must be non-negative".into()));
    }
    let n = errors.len();
    let by_unc = ascending(uncertainties);
    let by_err = ascending(errors);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curve = DiscardCurve {
        output: output.to_string(),
        metric,
        retained_fractions: fractions.to_vec(),
        error_by_uncertainty: Vec::new(),
        error_by_oracle: Vec::new(),
        error_random: Vec::new(),
        random_lower: Vec::new(),
        random_upper: Vec::new(),
    };
    let pick = |order: &[usize], k: usize| -> Vec<f64> { order[..k].iter().map(|&i| errors[i]).collect() };
    for &f in fractions {
        let k = retained_count(n, f)?;
        curve.error_by_uncertainty.push(metric.apply(&pick(&by_unc, k)));
        curve.error_by_oracle.push(metric.apply(&pick(&by_err, k)));
        let mut draws: Vec<f64> = (0..RANDOM_RESAMPLES)
            .map(|_| {
                let subset: Vec<f64> = sample(&mut rng, n, k).iter().map(|i| errors[i]).collect();
                metric.apply(&subset)
            })
            .collect();
        draws.sort_by(f64::total_cmp);
        curve.error_random.push(mean(&draws));
        curve.random_lower.push(percentile_sorted(&draws, 5.0));
        curve.random_upper.push(percentile_sorted(&draws, 95.0));
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model_id: String,
    pub n_test: usize,
    pub mc_samples: usize,
    pub seed: u64,
    pub accuracy: AccuracyReport,
    pub calibration: Vec<CalibrationCurve>,
    pub calibration_pooled: CalibrationCurve,
    pub calibration_form: String,
    pub sharpness_definition: String,
    pub discard: Vec<DiscardCurve>,
}

/// Model predictions paired with targets, reused by evaluation and routing.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub preds: Vec<PredictiveDistribution>,
    pub output_names: Vec<String>,
}

impl Predictions {
    pub fn compute(model: &dyn Surrogate, test: &Dataset, opts: &PredictOptions) -> Result<Self> {
        if test.n_outputs() != model.n_outputs() {
            return Err(Error::DimensionMismatch {
                context: "test outputs vs. model outputs",
                expected: model.n_outputs(),
                got: test.n_outputs(),
            });
        }
        Ok(Self {
            preds: model.predict_batch(&test.x.view(), opts)?,
            output_names: model.output_names().to_vec(),
        })
    }

    pub fn means(&self, output: usize) -> Vec<f64> {
        self.preds.iter().map(|p| p.mean[output]).collect()
    }

    pub fn stds(&self, output: usize) -> Vec<f64> {
        self.preds.iter().map(|p| p.variance[output].max(0.0).sqrt()).collect()
    }
}

/// Predicts the test set and computes every metric per output.
pub fn evaluate(model: &dyn Surrogate, test: &Dataset, opts: &PredictOptions) -> Result<EvaluationReport> {
    let preds = Predictions::compute(model, test, opts)?;
    evaluate_predictions(model, test, &preds, opts)
}

pub fn evaluate_predictions(
    model: &dyn Surrogate,
    test: &Dataset,
    preds: &Predictions,
    opts: &PredictOptions,
) -> Result<EvaluationReport> {
    let levels = default_levels();
    let fractions = default_fractions();
    let transform = model.output_transform();
    let mut accuracy = Vec::new();
    let mut calibration = Vec::new();
    let mut discard = Vec::new();
    for (o, name) in preds.output_names.iter().enumerate() {
        let y = test.y.column(o).to_vec();
        let y_hat = preds.means(o);
        let sd = preds.stds(o);
        let pe = percent_errors(&y, &y_hat)?;
        accuracy.push(OutputAccuracy {
            output: name.clone(),
            r2: r2(&y, &y_hat)?,
            mape: mean(&pe.values),
            ape90: percentile(&pe.values, 90.0)?,
            n_used: pe.values.len(),
            excluded_zeros: pe.excluded_zeros,
        });
        calibration.push(calibration_curve(&preds.preds, &y, o, name, transform, &levels)?);
        let unc: Vec<f64> = pe.rows.iter().map(|&i| sd[i]).collect();
        for metric in [DiscardMetric::Mape, DiscardMetric::Ape90] {
            discard.push(discard_curve(
                name,
                &pe.values,
                &unc,
                &fractions,
                metric,
                opts.seed.wrapping_add(o as u64),
            )?);
        }
    }
    Ok(EvaluationReport {
        model_id: model.model_id(),
        n_test: test.len(),
        mc_samples: preds.preds.first().map_or(0, |p| p.mc_samples_used),
        seed: opts.seed,
        accuracy: AccuracyReport {
            model_id: model.model_id(),
            n_test: test.len(),
            outputs: accuracy,
        },
        calibration_pooled: pooled_calibration_curve(&preds.preds, &test.y.view(), transform, &levels)?,
        calibration,
        calibration_form: "one-sided: fraction of y <= F^-1(p)".into(),
        sharpness_definition: SHARPNESS_DEFINITION.into(),
        discard,
    })
}

impl EvaluationReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &serde_json::to_string_pretty(self)?)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes `<prefix>_accuracy.csv`, `<prefix>_calibration.csv` and
    /// `<prefix>_discard.csv` into `dir`; returns the paths written.
    pub fn write_csvs(&self, dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let acc = dir.join(format!("{prefix}_accuracy.csv"));
        let mut w = csv::Writer::from_path(&acc)?;
        w.write_record(["output", "r2", "mape", "ape90", "n_used", "excluded_zeros"])?;
        for a in &self.accuracy.outputs {
            w.write_record([
                a.output.clone(),
                a.r2.to_string(),
                a.mape.to_string(),
                a.ape90.to_string(),
                a.n_used.to_string(),
                a.excluded_zeros.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&acc, e))?;

        let cal = dir.join(format!("{prefix}_calibration.csv"));
        let mut w = csv::Writer::from_path(&cal)?;
        w.write_record(["output", "level", "observed", "centered_observed"])?;
        for c in self.calibration.iter().chain(std::iter::once(&self.calibration_pooled)) {
            for i in 0..c.levels.len() {
                w.write_record([
                    c.output.clone(),
                    c.levels[i].to_string(),
                    c.observed[i].to_string(),
                    c.centered_observed[i].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&cal, e))?;

        let dis = dir.join(format!("{prefix}_discard.csv"));
        let mut w = csv::Writer::from_path(&dis)?;
        w.write_record([
            "output",
            "metric",
            "retained_fraction",
            "by_uncertainty",
            "by_oracle",
            "random_mean",
            "random_p05",
            "random_p95",
        ])?;
        for d in &self.discard {
            for i in 0..d.retained_fractions.len() {
                w.write_record([
                    d.output.clone(),
                    d.metric.name().to_string(),
                    d.retained_fractions[i].to_string(),
                    d.error_by_uncertainty[i].to_string(),
                    d.error_by_oracle[i].to_string(),
                    d.error_random[i].to_string(),
                    d.random_lower[i].to_string(),
                    d.random_upper[i].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&dis, e))?;
        Ok(vec![acc, cal, dis])
    }

    /// Plain-text table for terminals.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model: {}  (n_test = {})", self.model_id, self.n_test);
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>9} {:>9} {:>10} {:>11}",
            "output", "R2", "MAPE%", "APE90%", "cal.err", "sharpness"
        );
        for (a, c) in self.accuracy.outputs.iter().zip(&self.calibration) {
            let _ = writeln!(
                s,
                "{:<16} {:>8.4} {:>9.3} {:>9.3} {:>10.4} {:>11.4e}",
                a.output,
                a.r2,
                a.mape,
                a.ape90,
                c.auc_error,
                c.sharpness.unwrap_or(0.0)
            );
        }
        let _ = writeln!(s, "pooled calibration error: {:.4}", self.calibration_pooled.auc_error);
        s
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
