//! Feed-forward network trained with dropout variational inference.
//!
//! Training minimises the mean squared error of dropout-perturbed forward
//! passes plus the `(1-p)/(2N)·‖θ‖²` weight-decay term. At prediction time
//! `T` stochastic passes give the epistemic mean and variance per output.

mod crossval;

pub use crossval::{cross_validate, kfold_indices, CrossValResult, CvGrid, CvRow};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::Dataset;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig, Moments};
use crate::predictive::{check_inputs, PredictOptions, PredictiveDistribution, Surrogate};
use crate::transforms::{BoxCoxParams, TransformPipeline};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnnArchitecture {
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub hidden_layers: Vec<usize>,
    /// Negative-side slope of the leaky ReLU.
    pub leaky_slope: f64,
    pub dropout_p: f64,
    /// Also drop input features (off by default).
    #[serde(default)]
    pub input_dropout: bool,
}

impl BnnArchitecture {
    pub fn new(n_inputs: usize, n_outputs: usize) -> Self {
        Self {
            n_inputs,
            n_outputs,
            hidden_layers: vec![512, 512],
            leaky_slope: 0.01,
            dropout_p: 0.05,
            input_dropout: false,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden_layers = hidden;
        self
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout_p = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_inputs == 0 || self.n_outputs == 0 {
            return Err(Error::InvalidArgument("network needs inputs and outputs".into()));
        }
        if self.hidden_layers.is_empty() {
            return Err(Error::InvalidArgument("at least one hidden layer is required".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::InvalidArgument("hidden layer widths must be positive".into()));
        }
        if !(self.dropout_p > 0.0 && self.dropout_p < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in (0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// Widths of the layers that receive a dropout mask, in forward order.
    pub fn mask_widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_layers.len() + 1);
        if self.input_dropout {
            w.push(self.n_inputs);
        }
        w.extend(&self.hidden_layers);
        w
    }
}

/// Dense layer, `weights` is `(fan_out × fan_in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1200,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnnModel {
    pub architecture: BnnArchitecture,
    pub layers: Vec<Layer>,
    pub transforms: Option<TransformPipeline>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    /// Epoch-mean training loss.
    pub training_log: Vec<f64>,
    pub init_seed: u64,
    pub train_config: Option<TrainConfig>,
}

/// Per-layer gradients, same shapes as [`BnnModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.iter().chain(&l.bias).map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

struct Cache {
    /// Input of every dense layer (after dropout), `layers.len()` entries.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

/// Fresh Bernoulli(1−p) masks scaled by `1/(1−p)` (inverted dropout).
fn draw_scaled_masks<R: RngCore>(widths: &[usize], rows: usize, p: f64, rng: &mut R) -> Vec<Array2<f64>> {
    let keep = ((1.0 - p) * 4_294_967_296.0) as u64;
    let scale = 1.0 / (1.0 - p);
    widths
        .iter()
        .map(|&w| {
            Array2::from_shape_simple_fn((rows, w), || {
                if (rng.next_u32() as u64) < keep {
                    scale
                } else {
                    0.0
                }
            })
        })
        .collect()
}

impl BnnModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: BnnArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![arch.n_inputs];
        dims.extend(&arch.hidden_layers);
        dims.push(arch.n_outputs);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                    rng.random_range(-limit..limit)
                });
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        let input_names = (0..arch.n_inputs).map(|j| format!("x{j}")).collect();
        let output_names = (0..arch.n_outputs).map(|j| format!("y{j}")).collect();
        Ok(Self {
            architecture: arch,
            layers,
            transforms: None,
            input_names,
            output_names,
            training_log: Vec::new(),
            init_seed: seed,
            train_config: None,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.iter().chain(&l.bias).map(|w| w * w).sum::<f64>())
            .sum()
    }

    fn leaky(&self, v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            self.architecture.leaky_slope * v
        }
    }

    fn check_masks(&self, masks: &[Array2<f64>], rows: usize) -> Result<()> {
        let widths = self.architecture.mask_widths();
        if masks.len() != widths.len() {
            return Err(Error::DimensionMismatch {
                context: "dropout mask count",
                expected: widths.len(),
                got: masks.len(),
            });
        }
        for (m, w) in masks.iter().zip(widths) {
            if m.dim() != (rows, w) {
                return Err(Error::DimensionMismatch {
                    context: "dropout mask width",
                    expected: w,
                    got: m.ncols(),
                });
            }
        }
        Ok(())
    }

    /// Batched forward pass in model space. `scaled_masks` already carry the
    /// inverted-dropout factor; `None` is the deterministic pass.
    fn forward_cached(&self, x: &ArrayView2<f64>, scaled_masks: Option<&[Array2<f64>]>) -> Cache {
        let n_hidden = self.layers.len() - 1;
        let mut site = 0;
        let mut h = x.to_owned();
        if self.architecture.input_dropout {
            if let Some(m) = scaled_masks {
                h *= &m[0];
            }
            site = 1;
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(n_hidden);
        for (l, layer) in self.layers[..n_hidden].iter().enumerate() {
            let mut a = h.dot(&layer.weights.t());
            a += &layer.bias;
            let mut next = a.mapv(|v| self.leaky(v));
            if let Some(m) = scaled_masks {
                next *= &m[site + l];
            }
            inputs.push(h);
            pre.push(a);
            h = next;
        }
        let last = &self.layers[n_hidden];
        let mut out = h.dot(&last.weights.t());
        out += &last.bias;
        inputs.push(h);
        Cache {
            inputs,
            pre,
            output: out,
        }
    }

    /// Single-input forward pass on a standardised input.
    ///
    /// `masks` are 0/1 vectors, one per dropout site (hidden layers, plus the
    /// input when input dropout is enabled); kept units are scaled by
    /// `1/(1−p)`. `None` is the deterministic pass without scaling.
    pub fn forward(&self, x: &ArrayView1<f64>, masks: Option<&[Array1<f64>]>) -> Result<Array1<f64>> {
        if x.len() != self.architecture.n_inputs {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.architecture.n_inputs,
                got: x.len(),
            });
        }
        let xb = x.to_owned().insert_axis(Axis(0));
        let out = match masks {
            Some(ms) => {
                let scale = 1.0 / (1.0 - self.architecture.dropout_p);
                let scaled: Vec<Array2<f64>> = ms
                    .iter()
                    .map(|m| m.mapv(|v| v * scale).insert_axis(Axis(0)))
                    .collect();
                self.check_masks(&scaled, 1)?;
                self.forward_cached(&xb.view(), Some(&scaled)).output
            }
            None => self.forward_cached(&xb.view(), None).output,
        };
        Ok(out.remove_axis(Axis(0)))
    }

    /// Deterministic batched pass (no dropout).
    pub fn forward_batch(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        check_inputs(x, self.architecture.n_inputs)?;
        Ok(self.forward_cached(x, None).output)
    }

    /// Loss and gradients for a batch with the given 0/1 dropout masks
    /// (rows × width per site). `n_train` is the full training-set size `N`
    /// that sets the weight-decay scale.
    pub fn loss_and_grad_with_masks(
        &self,
        x: &ArrayView2<f64>,
        y: &ArrayView2<f64>,
        masks: &[Array2<f64>],
        n_train: usize,
    ) -> Result<(f64, Gradients)> {
        check_inputs(x, self.architecture.n_inputs)?;
        self.check_masks(masks, x.nrows())?;
        let scale = 1.0 / (1.0 - self.architecture.dropout_p);
        let scaled: Vec<Array2<f64>> = masks.iter().map(|m| m * scale).collect();
        self.loss_and_grad_scaled(x, y, &scaled, n_train)
    }

    fn loss_and_grad_scaled(
        &self,
        x: &ArrayView2<f64>,
        y: &ArrayView2<f64>,
        scaled_masks: &[Array2<f64>],
        n_train: usize,
    ) -> Result<(f64, Gradients)> {
        let b = x.nrows();
        if b == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if y.dim() != (b, self.architecture.n_outputs) {
            return Err(Error::DimensionMismatch {
                context: "batch targets",
                expected: self.architecture.n_outputs,
                got: y.ncols(),
            });
        }
        let cache = self.forward_cached(x, Some(scaled_masks));
        let resid = &cache.output - y;
        let denom = (b * self.architecture.n_outputs) as f64;
        let mse = resid.iter().map(|r| r * r).sum::<f64>() / denom;
        let decay = (1.0 - self.architecture.dropout_p) / n_train as f64;
        let loss = mse + 0.5 * decay * self.squared_norm();

        let site0 = usize::from(self.architecture.input_dropout);
        let n_layers = self.layers.len();
        let mut grads: Vec<Layer> = Vec::with_capacity(n_layers);
        let mut delta = resid * (2.0 / denom);
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let mut gw = delta.t().dot(input);
            gw.scaled_add(decay, &layer.weights);
            let mut gb = delta.sum_axis(Axis(0));
            gb.scaled_add(decay, &layer.bias);
            grads.push(Layer {
                weights: gw,
                bias: gb,
            });
            if l == 0 {
                break;
            }
            // back through mask and activation of hidden layer l-1
            let mut dh = delta.dot(&layer.weights);
            let slope = self.architecture.leaky_slope;
            Zip::from(&mut dh)
                .and(&scaled_masks[site0 + l - 1])
                .and(&cache.pre[l - 1])
                .for_each(|d, &m, &a| {
                    *d *= m * if a > 0.0 { 1.0 } else { slope };
                });
            delta = dh;
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }

    /// Loss of one minibatch with fresh per-sample dropout masks.
    pub fn loss<R: RngCore>(
        &self,
        x: &ArrayView2<f64>,
        y: &ArrayView2<f64>,
        n_train: usize,
        rng: &mut R,
    ) -> Result<f64> {
        check_inputs(x, self.architecture.n_inputs)?;
        let masks = draw_scaled_masks(
            &self.architecture.mask_widths(),
            x.nrows(),
            self.architecture.dropout_p,
            rng,
        );
        Ok(self.loss_and_grad_scaled(x, y, &masks, n_train)?.0)
    }

    /// Minibatch Adam on already transformed data.
    pub fn train_arrays(
        &mut self,
        x: &ArrayView2<f64>,
        y: &ArrayView2<f64>,
        config: &TrainConfig,
    ) -> Result<()> {
        config.validate()?;
        check_inputs(x, self.architecture.n_inputs)?;
        let n = x.nrows();
        if n == 0 || y.nrows() != n {
            return Err(Error::InvalidArgument("training data is empty or ragged".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut adam = Adam::new(config.adam);
        let mut moments: Vec<(Moments, Moments)> = self
            .layers
            .iter()
            .map(|l| (Moments::new(l.weights.len()), Moments::new(l.bias.len())))
            .collect();
        let widths = self.architecture.mask_widths();
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for (batch, idx) in order.chunks(config.batch_size).enumerate() {
                let xb = x.select(Axis(0), idx);
                let yb = y.select(Axis(0), idx);
                let masks =
                    draw_scaled_masks(&widths, idx.len(), self.architecture.dropout_p, &mut rng);
                let (loss, grads) =
                    self.loss_and_grad_scaled(&xb.view(), &yb.view(), &masks, n)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        epoch,
                        batch,
                        grad_norm: grads.norm(),
                    });
                }
                epoch_loss += loss * idx.len() as f64;
                adam.tick();
                for ((layer, g), (mw, mb)) in
                    self.layers.iter_mut().zip(&grads.layers).zip(&mut moments)
                {
                    adam.update(
                        mw,
                        layer.weights.as_slice_mut().expect("standard layout"),
                        g.weights.as_slice().expect("standard layout"),
                    );
                    adam.update(
                        mb,
                        layer.bias.as_slice_mut().expect("contiguous"),
                        g.bias.as_slice().expect("contiguous"),
                    );
                }
            }
            self.training_log.push(epoch_loss / n as f64);
        }
        self.train_config = Some(*config);
        Ok(())
    }

    /// Fits the transform pipeline on `ds` (unless already present) and trains.
    pub fn train(mut self, ds: &Dataset, config: &TrainConfig) -> Result<Self> {
        if ds.n_inputs() != self.architecture.n_inputs || ds.n_outputs() != self.architecture.n_outputs {
            return Err(Error::DimensionMismatch {
                context: "dataset vs. architecture",
                expected: self.architecture.n_inputs + self.architecture.n_outputs,
                got: ds.n_inputs() + ds.n_outputs(),
            });
        }
        let tp = match self.transforms.take() {
            Some(tp) => tp,
            None => TransformPipeline::fit(ds)?,
        };
        let (xs, ys) = tp.transform(ds)?;
        self.input_names = ds.input_names.clone();
        self.output_names = ds.output_names.clone();
        self.transforms = Some(tp);
        self.train_arrays(&xs.view(), &ys.view(), config)?;
        Ok(self)
    }

    /// MC-dropout moments in model space for standardised inputs:
    /// `E = mean of passes`, `Var = mean of squares − E²` (floored at 0).
    pub fn predict_latent(
        &self,
        x_std: &ArrayView2<f64>,
        passes: usize,
        seed: u64,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        if passes < 2 {
            return Err(Error::InvalidArgument(format!(
                "MC prediction needs at least 2 passes, got {passes}"
            )));
        }
        check_inputs(x_std, self.architecture.n_inputs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = self.architecture.mask_widths();
        let shape = (x_std.nrows(), self.architecture.n_outputs);
        let mut sum = Array2::<f64>::zeros(shape);
        let mut sum_sq = Array2::<f64>::zeros(shape);
        for _ in 0..passes {
            let masks = draw_scaled_masks(&widths, x_std.nrows(), self.architecture.dropout_p, &mut rng);
            let out = self.forward_cached(x_std, Some(&masks)).output;
            sum += &out;
            Zip::from(&mut sum_sq).and(&out).for_each(|s, &o| *s += o * o);
        }
        let t = passes as f64;
        let mean = sum / t;
        let mut var = sum_sq / t;
        Zip::from(&mut var).and(&mean).for_each(|v, &m| *v = (*v - m * m).max(0.0));
        Ok((mean, var))
    }

    /// MC-dropout predictive distributions for original-unit inputs.
    pub fn predict_mc(
        &self,
        x: &ArrayView2<f64>,
        passes: usize,
        seed: u64,
    ) -> Result<Vec<PredictiveDistribution>> {
        check_inputs(x, self.architecture.n_inputs)?;
        let xs = match &self.transforms {
            Some(tp) => tp.input.apply(x)?,
            None => x.to_owned(),
        };
        let (mean, var) = self.predict_latent(&xs.view(), passes, seed)?;
        mean.outer_iter()
            .zip(var.outer_iter())
            .map(|(m, v)| match &self.transforms {
                Some(tp) => {
                    PredictiveDistribution::from_latent(&tp.output, m.to_vec(), v.to_vec(), passes)
                }
                None => {
                    let mut p = PredictiveDistribution::gaussian(m.to_vec(), v.to_vec());
                    p.mc_samples_used = passes;
                    Ok(p)
                }
            })
            .collect()
    }
}

impl Surrogate for BnnModel {
    fn model_id(&self) -> String {
        let a = &self.architecture;
        format!(
            "bnn-{}-p{}-seed{}",
            a.hidden_layers
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join("x"),
            a.dropout_p,
            self.init_seed
        )
    }

    fn input_names(&self) -> &[String] {
        &self.input_names
    }

    fn output_names(&self) -> &[String] {
        &self.output_names
    }

    fn output_transform(&self) -> Option<&BoxCoxParams> {
        self.transforms.as_ref().map(|t| &t.output)
    }

    fn predict_batch(
        &self,
        x: &ArrayView2<f64>,
        opts: &PredictOptions,
    ) -> Result<Vec<PredictiveDistribution>> {
        self.predict_mc(x, opts.mc_samples, opts.seed)
    }
}
