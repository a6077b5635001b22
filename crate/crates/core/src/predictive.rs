//! Per-output Gaussian predictions and the common surrogate interface.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{self, Simulator};
use crate::transforms::BoxCoxParams;

/// Predictive distribution of one design point, in original output units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Gaussian in the model's (standardised, Box-Cox) training space, when
    /// the prediction was pushed through an output transform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<LatentGaussian>,
    pub mc_samples_used: usize,
    pub range_clipped: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl PredictiveDistribution {
    /// A Gaussian given directly in original units.
    pub fn gaussian(mean: Vec<f64>, variance: Vec<f64>) -> Self {
        let n = mean.len();
        Self {
            mean,
            variance,
            latent: None,
            mc_samples_used: 0,
            range_clipped: vec![false; n],
        }
    }

    /// Maps latent (transformed-space) moments to original units.
    pub fn from_latent(
        transform: &BoxCoxParams,
        latent_mean: Vec<f64>,
        latent_variance: Vec<f64>,
        mc_samples_used: usize,
    ) -> Result<Self> {
        let n = latent_mean.len();
        let mut mean = Vec::with_capacity(n);
        let mut variance = Vec::with_capacity(n);
        let mut range_clipped = Vec::with_capacity(n);
        for (o, (m, v)) in latent_mean.iter().zip(&latent_variance).enumerate() {
            let pf = transform.pushforward(o, *m, v.max(0.0))?;
            mean.push(pf.mean);
            variance.push(pf.variance.max(0.0));
            range_clipped.push(pf.clipped);
        }
        Ok(Self {
            mean,
            variance,
            latent: Some(LatentGaussian {
                mean: latent_mean,
                variance: latent_variance,
            }),
            mc_samples_used,
            range_clipped,
        })
    }

    pub fn n_outputs(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    /// Stochastic forward passes (ignored by closed-form models).
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            mc_samples: 30,
            seed: 0,
        }
    }
}

/// A trained emulator mapping original-unit inputs to predictive distributions.
pub trait Surrogate {
    fn model_id(&self) -> String;
    fn input_names(&self) -> &[String];
    fn output_names(&self) -> &[String];
    /// Output transform under which the latent Gaussian is exact, if any.
    fn output_transform(&self) -> Option<&BoxCoxParams>;
    fn predict_batch(
        &self,
        x: &ArrayView2<f64>,
        opts: &PredictOptions,
    ) -> Result<Vec<PredictiveDistribution>>;

    fn n_inputs(&self) -> usize {
        self.input_names().len()
    }

    fn n_outputs(&self) -> usize {
        self.output_names().len()
    }

    fn predict_one(&self, x: &[f64], opts: &PredictOptions) -> Result<PredictiveDistribution> {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(self.predict_batch(&row.view(), opts)?.remove(0))
    }
}

pub(crate) fn check_inputs(x: &ArrayView2<f64>, expected: usize) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::DimensionMismatch {
            context: "model inputs",
            expected,
            got: x.ncols(),
        });
    }
    Ok(())
}

/// The simulator itself presented as a zero-variance surrogate.
#[derive(Debug, Clone)]
pub struct SimulatorSurrogate {
    pub simulator: Simulator,
    input_names: Vec<String>,
    output_names: Vec<String>,
}

impl SimulatorSurrogate {
    pub fn new(simulator: Simulator) -> Self {
        Self {
            simulator,
            input_names: simulator::INPUT_NAMES.iter().map(|s| s.to_string()).collect(),
            output_names: simulator::output_names(),
        }
    }
}

impl Surrogate for SimulatorSurrogate {
    fn model_id(&self) -> String {
        "simulator".into()
    }

    fn input_names(&self) -> &[String] {
        &self.input_names
    }

    fn output_names(&self) -> &[String] {
        &self.output_names
    }

    fn output_transform(&self) -> Option<&BoxCoxParams> {
        None
    }

    fn predict_batch(
        &self,
        x: &ArrayView2<f64>,
        _opts: &PredictOptions,
    ) -> Result<Vec<PredictiveDistribution>> {
        check_inputs(x, self.n_inputs())?;
        let y = simulator::simulate_batch(x, &self.simulator)?;
        Ok(y
            .outer_iter()
            .map(|r| PredictiveDistribution::gaussian(r.to_vec(), vec![0.0; r.len()]))
            .collect())
    }
}
