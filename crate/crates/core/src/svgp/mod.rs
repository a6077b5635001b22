//! Sparse variational GP regression (one independent model per output).
//!
//! The variational posterior `q(u) = N(m_u, S_u)` is held unwhitened, with
//! `S_u = L Lᵀ` and the diagonal of `L` stored as logarithms.

mod inducing;
mod kernel;

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use inducing::{init_inducing, InducingInit};
pub use kernel::{Kernel, KernelKind};

use crate::design_space::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{cho_inverse, cho_logdet, jittered_cholesky};
use crate::optim::{Adam, AdamConfig, Moments};
use crate::predictive::{check_inputs, PredictOptions, PredictiveDistribution, Surrogate};
use crate::transforms::{BoxCoxParams, TransformPipeline};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvgpConfig {
    pub kernel: KernelKind,
    pub n_inducing: usize,
    pub inducing_init: InducingInit,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Fixed noise variance as a fraction of the mean absolute transformed output.
    pub noise_scale: f64,
    /// Initial lengthscale; `None` uses `√d`.
    pub init_lengthscale: Option<f64>,
}

impl Default for SvgpConfig {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Matern32,
            n_inducing: 100,
            inducing_init: InducingInit::RandomSubset,
            steps: 3000,
            batch_size: 100,
            adam: AdamConfig {
                step_size: 0.01,
                ..AdamConfig::default()
            },
            seed: 0,
            noise_scale: 1e-5,
            init_lengthscale: None,
        }
    }
}

impl SvgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_inducing == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "inducing point count and batch size must be >= 1".into(),
            ));
        }
        if !(self.noise_scale > 0.0) {
            return Err(Error::InvalidArgument("noise scale must be positive".into()));
        }
        if matches!(self.init_lengthscale, Some(l) if !(l > 0.0)) {
            return Err(Error::InvalidArgument("initial lengthscale must be positive".into()));
        }
        Ok(())
    }
}

/// One output's sparse GP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvgpOutput {
    pub kernel: Kernel,
    /// Inducing locations, `m × d`.
    pub z: Array2<f64>,
    pub q_mu: Array1<f64>,
    /// Lower-triangular factor of `S_u` with positive diagonal.
    pub q_sqrt: Array2<f64>,
    pub noise_variance: f64,
}

struct Prior {
    kzz: Array2<f64>,
    kinv: Array2<f64>,
    logdet: f64,
}

impl SvgpOutput {
    /// `q(u) = p(u)`: zero mean and `S_u = K_zz`.
    pub fn prior(kernel: Kernel, z: Array2<f64>, noise_variance: f64) -> Result<Self> {
        if z.ncols() != kernel.dim() {
            return Err(Error::DimensionMismatch {
                context: "inducing locations",
                expected: kernel.dim(),
                got: z.ncols(),
            });
        }
        if !(noise_variance > 0.0) {
            return Err(Error::InvalidArgument("noise variance must be positive".into()));
        }
        let (l, _) = jittered_cholesky(&kernel.gram(&z.view())?.view())?;
        Ok(Self {
            q_mu: Array1::zeros(z.nrows()),
            q_sqrt: l,
            kernel,
            z,
            noise_variance,
        })
    }

    pub fn n_inducing(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn n_params(&self) -> usize {
        let (m, d) = self.z.dim();
        1 + d + m * d + m + m * (m + 1) / 2
    }

    pub fn s_u(&self) -> Array2<f64> {
        self.q_sqrt.dot(&self.q_sqrt.t())
    }

    /// Unconstrained parameter vector:
    /// `[log σ², log ℓ, Z (row-major), m_u, tril(L) with log diagonal]`.
    pub fn params(&self) -> Vec<f64> {
        let m = self.n_inducing();
        let mut p = Vec::with_capacity(self.n_params());
        p.push(self.kernel.variance.ln());
        p.extend(self.kernel.lengthscales.iter().map(|l| l.ln()));
        p.extend(self.z.iter());
        p.extend(self.q_mu.iter());
        for i in 0..m {
            for j in 0..=i {
                let v = self.q_sqrt[[i, j]];
                p.push(if i == j { v.ln() } else { v });
            }
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                context: "SVGP parameter vector",
                expected: self.n_params(),
                got: p.len(),
            });
        }
        let (m, d) = self.z.dim();
        let mut it = p.iter().copied();
        let mut next = || it.next().expect("length checked");
        self.kernel.variance = next().exp();
        for l in self.kernel.lengthscales.iter_mut() {
            *l = next().exp();
        }
        for v in self.z.iter_mut() {
            *v = next();
        }
        for v in self.q_mu.iter_mut() {
            *v = next();
        }
        for i in 0..m {
            for j in 0..=i {
                let v = next();
                self.q_sqrt[[i, j]] = if i == j { v.exp() } else { v };
            }
        }
        debug_assert_eq!(d, self.kernel.dim());
        Ok(())
    }

    fn prior_terms(&self) -> Result<Prior> {
        let kzz = self.kernel.gram(&self.z.view())?;
        let (l, _) = jittered_cholesky(&kzz.view())?;
        Ok(Prior {
            kinv: cho_inverse(&l.view()),
            logdet: cho_logdet(&l.view()),
            kzz,
        })
    }

    fn check_batch(&self, x: &ArrayView2<f64>, y: &ArrayView1<f64>) -> Result<()> {
        check_inputs(x, self.dim())?;
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "batch targets",
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.nrows() == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        Ok(())
    }

    /// `KL[q(u) ‖ p(u)]`.
    pub fn kl(&self) -> Result<f64> {
        let pr = self.prior_terms()?;
        Ok(self.kl_with(&pr))
    }

    fn kl_with(&self, pr: &Prior) -> f64 {
        let m = self.n_inducing() as f64;
        let s = self.s_u();
        let trace: f64 = pr.kinv.iter().zip(s.iter()).map(|(a, b)| a * b).sum();
        let quad = self.q_mu.dot(&pr.kinv.dot(&self.q_mu));
        let logdet_s: f64 = 2.0 * self.q_sqrt.diag().iter().map(|v| v.ln()).sum::<f64>();
        0.5 * (trace + quad - m + pr.logdet - logdet_s)
    }

    /// Minibatch ELBO with the likelihood sum rescaled by `n_total / batch`.
    pub fn elbo(&self, x: &ArrayView2<f64>, y: &ArrayView1<f64>, n_total: usize) -> Result<f64> {
        self.check_batch(x, y)?;
        Ok(self.elbo_impl(x, y, n_total, false)?.0)
    }

    /// ELBO and its gradient with respect to [`params`](Self::params).
    pub fn elbo_and_grad(
        &self,
        x: &ArrayView2<f64>,
        y: &ArrayView1<f64>,
        n_total: usize,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_batch(x, y)?;
        let (f, g) = self.elbo_impl(x, y, n_total, true)?;
        Ok((f, g.expect("gradient requested")))
    }

    fn elbo_impl(
        &self,
        x: &ArrayView2<f64>,
        y: &ArrayView1<f64>,
        n_total: usize,
        with_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>)> {
        let (m, d) = self.z.dim();
        let b = x.nrows();
        let sigma2 = self.kernel.variance;
        let pr = self.prior_terms()?;
        let kxz = self.kernel.matrix(x, &self.z.view())?;
        let a = pr.kinv.dot(&kxz.t());
        let mu = a.t().dot(&self.q_mu);
        let s = self.s_u();
        let sa = s.dot(&a);

        let c = 1.0 / self.noise_variance;
        let scale = n_total as f64 / b as f64;
        let mut e = 0.0;
        for i in 0..b {
            let mut var = sigma2;
            for k in 0..m {
                var += a[[k, i]] * (sa[[k, i]] - kxz[[i, k]]);
            }
            let r = y[i] - mu[i];
            e += -0.5 * (2.0 * PI * self.noise_variance).ln() - 0.5 * c * (r * r + var);
        }
        e *= scale;
        let kl = self.kl_with(&pr);
        let elbo = e - kl;
        if !with_grad {
            return Ok((elbo, None));
        }

        let g: Array1<f64> = (y - &mu) * (scale * c);
        let h = -0.5 * scale * c;
        let alpha = pr.kinv.dot(&self.q_mu);
        let ag = a.dot(&g);

        let grad_q = &ag - &alpha;

        let q = a.dot(&a.t());
        let g_s = &q * h - &pr.kinv * 0.5;
        let grad_l = (&g_s * 2.0).dot(&self.q_sqrt);

        let kinv_s = pr.kinv.dot(&s);
        let bmat = kinv_s.dot(&pr.kinv) - &pr.kinv;
        let mut g_xz = kxz.dot(&bmat) * (2.0 * h);
        for i in 0..b {
            for k in 0..m {
                g_xz[[i, k]] += g[i] * alpha[k];
            }
        }
        let qsk = q.dot(&kinv_s.t());
        let ksq = kinv_s.dot(&q);
        let mut g_k = (&q - &qsk - &ksq) * h + &bmat * 0.5;
        for k in 0..m {
            for l in 0..m {
                g_k[[k, l]] += 0.5 * alpha[k] * alpha[l] - ag[k] * alpha[l];
            }
        }

        let ell = &self.kernel.lengthscales;
        let mut grad_logvar = h * b as f64 * sigma2;
        grad_logvar += g_k.iter().zip(pr.kzz.iter()).map(|(a, b)| a * b).sum::<f64>();
        grad_logvar += g_xz.iter().zip(kxz.iter()).map(|(a, b)| a * b).sum::<f64>();
        let mut grad_logl = vec![0.0; d];
        let mut grad_z = Array2::<f64>::zeros((m, d));
        for i in 0..b {
            let xi = x.row(i);
            for k in 0..m {
                let zk = self.z.row(k);
                let r = self.kernel.scaled_sq_dist(&xi, &zk).sqrt();
                let w = g_xz[[i, k]] * self.kernel.grad_factor(r);
                for j in 0..d {
                    let diff = xi[j] - zk[j];
                    let l2 = ell[j] * ell[j];
                    grad_logl[j] += w * diff * diff / l2;
                    grad_z[[k, j]] += w * diff / l2;
                }
            }
        }
        for k in 0..m {
            for l in 0..k {
                let zk = self.z.row(k);
                let zl = self.z.row(l);
                let r = self.kernel.scaled_sq_dist(&zk, &zl).sqrt();
                let w = (g_k[[k, l]] + g_k[[l, k]]) * self.kernel.grad_factor(r);
                for j in 0..d {
                    let diff = zk[j] - zl[j];
                    let l2 = ell[j] * ell[j];
                    grad_logl[j] += w * diff * diff / l2;
                    grad_z[[k, j]] -= w * diff / l2;
                    grad_z[[l, j]] += w * diff / l2;
                }
            }
        }

        let mut grad = Vec::with_capacity(self.n_params());
        grad.push(grad_logvar);
        grad.extend(grad_logl);
        grad.extend(grad_z.iter());
        grad.extend(grad_q.iter());
        for i in 0..m {
            for j in 0..=i {
                let v = grad_l[[i, j]];
                grad.push(if i == j { v * self.q_sqrt[[i, i]] + 1.0 } else { v });
            }
        }
        Ok((elbo, Some(grad)))
    }

    /// Latent mean and epistemic variance of `f` at standardised inputs.
    pub fn predict_latent(&self, x: &ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        check_inputs(x, self.dim())?;
        let pr = self.prior_terms()?;
        let kxz = self.kernel.matrix(x, &self.z.view())?;
        let a = pr.kinv.dot(&kxz.t());
        let mean = a.t().dot(&self.q_mu);
        let sa = self.s_u().dot(&a);
        let var = Array1::from_shape_fn(x.nrows(), |i| {
            let mut v = self.kernel.variance;
            for k in 0..self.n_inducing() {
                v += a[[k, i]] * (sa[[k, i]] - kxz[[i, k]]);
            }
            v.max(0.0)
        });
        Ok((mean, var))
    }
}

/// Independent SVGPs for every output, with the preprocessing they were trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvgpModel {
    pub outputs: Vec<SvgpOutput>,
    pub transforms: Option<TransformPipeline>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    /// Minibatch ELBO per optimisation step, one series per output.
    pub training_log: Vec<Vec<f64>>,
    pub config: SvgpConfig,
    /// Add the fixed noise variance to predictive variances.
    #[serde(default)]
    pub include_noise: bool,
}

impl SvgpModel {
    /// Initial model on standardised inputs and transformed outputs.
    pub fn init(x: &ArrayView2<f64>, y: &ArrayView2<f64>, config: &SvgpConfig) -> Result<Self> {
        config.validate()?;
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch {
                context: "training targets",
                expected: x.nrows(),
                got: y.nrows(),
            });
        }
        let d = x.ncols();
        let z = init_inducing(x, config.n_inducing, config.inducing_init, config.seed)?;
        let ell = config.init_lengthscale.unwrap_or((d as f64).sqrt());
        let kernel = Kernel::new(config.kernel, 1.0, vec![ell; d])?;
        let mut outputs = Vec::with_capacity(y.ncols());
        for col in y.axis_iter(Axis(1)) {
            let mean_abs = col.iter().map(|v| v.abs()).sum::<f64>() / col.len() as f64;
            let noise = config.noise_scale * if mean_abs > 0.0 { mean_abs } else { 1.0 };
            outputs.push(SvgpOutput::prior(kernel.clone(), z.clone(), noise)?);
        }
        Ok(Self {
            input_names: (0..d).map(|j| format!("x{j}")).collect(),
            output_names: (0..y.ncols()).map(|j| format!("y{j}")).collect(),
            training_log: vec![Vec::new(); y.ncols()],
            outputs,
            transforms: None,
            config: *config,
            include_noise: false,
        })
    }

    /// Runs `config.steps` Adam steps on `−ELBO` for every output.
    pub fn train_arrays(mut self, x: &ArrayView2<f64>, y: &ArrayView2<f64>, config: &SvgpConfig) -> Result<Self> {
        config.validate()?;
        if y.ncols() != self.outputs.len() {
            return Err(Error::DimensionMismatch {
                context: "training targets",
                expected: self.outputs.len(),
                got: y.ncols(),
            });
        }
        let n = x.nrows();
        for (o, out) in self.outputs.iter_mut().enumerate() {
            let col = y.column(o);
            out.check_batch(x, &col)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(o as u64 + 1);
            let mut order: Vec<usize> = (0..n).collect();
            let mut cursor = n;
            let batch = config.batch_size.min(n);
            let mut params = out.params();
            let mut moments = Moments::new(params.len());
            let mut adam = Adam::new(config.adam);
            let log = &mut self.training_log[o];
            for step in 0..config.steps {
                if cursor + batch > n {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let idx = &order[cursor..cursor + batch];
                cursor += batch;
                let xb = x.select(Axis(0), idx);
                let yb = col.select(Axis(0), idx);
                let (f, grad) = out.elbo_and_grad(&xb.view(), &yb.view(), n)?;
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if !f.is_finite() || !norm.is_finite() {
                    return Err(Error::NonFinite {
                        epoch: step,
                        batch: o,
                        grad_norm: norm,
                    });
                }
                log.push(f);
                let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                adam.tick();
                adam.update(&mut moments, &mut params, &neg);
                out.set_params(&params)?;
            }
        }
        self.config = *config;
        Ok(self)
    }

    /// Fits transforms on `ds`, initialises and trains.
    pub fn train(ds: &Dataset, config: &SvgpConfig) -> Result<Self> {
        let tp = TransformPipeline::fit(ds)?;
        let (xs, ys) = tp.transform(ds)?;
        let mut model = Self::init(&xs.view(), &ys.view(), config)?.train_arrays(&xs.view(), &ys.view(), config)?;
        model.input_names = ds.input_names.clone();
        model.output_names = ds.output_names.clone();
        model.transforms = Some(tp);
        Ok(model)
    }

    /// Latent moments (`n × outputs`) at standardised inputs.
    pub fn predict_latent(&self, x_std: &ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let shape = (x_std.nrows(), self.outputs.len());
        let mut mean = Array2::zeros(shape);
        let mut var = Array2::zeros(shape);
        for (o, out) in self.outputs.iter().enumerate() {
            let (m, mut v) = out.predict_latent(x_std)?;
            if self.include_noise {
                v += out.noise_variance;
            }
            mean.column_mut(o).assign(&m);
            var.column_mut(o).assign(&v);
        }
        Ok((mean, var))
    }
}

impl Surrogate for SvgpModel {
    fn model_id(&self) -> String {
        let kind = match self.config.kernel {
            KernelKind::Matern32 => "matern32",
            KernelKind::SquaredExponential => "se",
        };
        format!(
            "svgp-{kind}-m{}-seed{}",
            self.outputs.first().map_or(0, SvgpOutput::n_inducing),
            self.config.seed
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

    fn predict_batch(&self, x: &ArrayView2<f64>, _opts: &PredictOptions) -> Result<Vec<PredictiveDistribution>> {
        check_inputs(x, self.n_inputs())?;
        let xs = match &self.transforms {
            Some(tp) => tp.input.apply(x)?,
            None => x.to_owned(),
        };
        let (mean, var) = self.predict_latent(&xs.view())?;
        mean.outer_iter()
            .zip(var.outer_iter())
            .map(|(m, v)| match &self.transforms {
                Some(tp) => PredictiveDistribution::from_latent(&tp.output, m.to_vec(), v.to_vec(), 0),
                None => Ok(PredictiveDistribution::gaussian(m.to_vec(), v.to_vec())),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
