//! Invertible preprocessing: input standardisation and per-output Box-Cox
//! followed by standardisation.
//!
//! Surrogates are trained and queried in the transformed output space; the
//! Gaussian they predict there is mapped back to original units with
//! [`BoxCoxParams::pushforward`].

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::design_space::Dataset;
use crate::error::{Error, Result};
use crate::stats::gauss_hermite;

pub const LAMBDA_MIN: f64 = -5.0;
pub const LAMBDA_MAX: f64 = 5.0;
pub const DEFAULT_QUADRATURE_NODES: usize = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizeParams {
    /// Column means and sample (n−1) standard deviations.
    pub fn fit(x: &ArrayView2<f64>, names: &[String]) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            let m = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let s = var.sqrt();
            if !(s > 0.0) || !s.is_finite() {
                let column = names
                    .get(j)
                    .cloned()
                    .unwrap_or_else(|| format!("column {j}"));
                return Err(Error::DegenerateColumn { column });
            }
            mean.push(m);
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "standardize columns",
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(x)?;
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    pub fn invert(&self, z: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(z)?;
        let mut out = z.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| v * s + m);
        }
        Ok(out)
    }

    pub fn apply_slice(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "standardize columns",
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

/// Box-Cox of `v > 0`; `log v` at λ = 0.
pub fn boxcox(v: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        v.ln()
    } else {
        (lambda * v.ln()).exp_m1() / lambda
    }
}

/// Inverse of [`boxcox`], `None` outside the image of the forward map.
pub fn inv_boxcox(t: f64, lambda: f64) -> Option<f64> {
    if lambda == 0.0 {
        return Some(t.exp());
    }
    let base = lambda * t;
    if !(base > -1.0) {
        return None;
    }
    let v = (base.ln_1p() / lambda).exp();
    v.is_finite().then_some(v)
}

/// Profile log-likelihood of the Box-Cox model for positive data, constants dropped.
pub fn boxcox_llf(data: &[f64], lambda: f64) -> f64 {
    let logs: Vec<f64> = data.iter().map(|v| v.ln()).collect();
    llf_from_logs(&logs, lambda)
}

fn llf_from_logs(logs: &[f64], lambda: f64) -> f64 {
    let n = logs.len() as f64;
    let t: Vec<f64> = logs
        .iter()
        .map(|&l| {
            if lambda == 0.0 {
                l
            } else {
                (lambda * l).exp_m1() / lambda
            }
        })
        .collect();
    let m = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let sum_log: f64 = logs.iter().sum();
    -0.5 * n * var.ln() + (lambda - 1.0) * sum_log
}

/// Maximum-likelihood λ on [`LAMBDA_MIN`, `LAMBDA_MAX`]: coarse scan then
/// golden-section refinement around the best grid point.
pub fn fit_lambda(data: &[f64]) -> f64 {
    let logs: Vec<f64> = data.iter().map(|v| v.ln()).collect();
    let f = |l: f64| {
        let v = llf_from_logs(&logs, l);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let step = 0.05;
    let n_grid = ((LAMBDA_MAX - LAMBDA_MIN) / step).round() as usize;
    let (mut best_l, mut best_v) = (LAMBDA_MIN, f64::NEG_INFINITY);
    for k in 0..=n_grid {
        let l = LAMBDA_MIN + k as f64 * step;
        let v = f(l);
        if v > best_v {
            best_v = v;
            best_l = l;
        }
    }
    let mut a = (best_l - step).max(LAMBDA_MIN);
    let mut b = (best_l + step).min(LAMBDA_MAX);
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    let refined = 0.5 * (a + b);
    if f(refined) >= best_v {
        refined
    } else {
        best_l
    }
}

/// Per-output Box-Cox parameters plus the standardisation applied afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCoxParams {
    pub lambda: Vec<f64>,
    pub shift: Vec<f64>,
    pub post_standardize: StandardizeParams,
}

/// Gaussian mapped back to original units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pushforward {
    pub mean: f64,
    pub variance: f64,
    /// Some quadrature nodes fell outside the invertible domain and were dropped.
    pub clipped: bool,
}

impl BoxCoxParams {
    pub fn fit(y: &ArrayView2<f64>, names: &[String]) -> Result<Self> {
        let n = y.nrows();
        if n < 3 {
            return Err(Error::InsufficientData { needed: 3, got: n });
        }
        let mut lambda = Vec::with_capacity(y.ncols());
        let mut shift = Vec::with_capacity(y.ncols());
        let mut transformed = Array2::zeros(y.raw_dim());
        for (j, col) in y.axis_iter(Axis(1)).enumerate() {
            let min = col.iter().copied().fold(f64::INFINITY, f64::min);
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let range = max - min;
            let eps = 1e-6 * if range > 0.0 { range } else { 1.0 };
            let s = (eps - min).max(0.0);
            let shifted: Vec<f64> = col.iter().map(|v| v + s).collect();
            let l = fit_lambda(&shifted);
            for (i, v) in shifted.iter().enumerate() {
                transformed[[i, j]] = boxcox(*v, l);
            }
            lambda.push(l);
            shift.push(s);
        }
        let post_standardize = StandardizeParams::fit(&transformed.view(), names)?;
        Ok(Self {
            lambda,
            shift,
            post_standardize,
        })
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    fn check(&self, y: &ArrayView2<f64>) -> Result<()> {
        if y.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "box-cox columns",
                expected: self.dim(),
                got: y.ncols(),
            });
        }
        Ok(())
    }

    /// Box-Cox value before standardisation.
    pub fn forward_raw(&self, col: usize, y: f64) -> Result<f64> {
        let v = y + self.shift[col];
        if !(v > 0.0) {
            return Err(Error::Domain { column: col, value: y });
        }
        Ok(boxcox(v, self.lambda[col]))
    }

    pub fn forward(&self, col: usize, y: f64) -> Result<f64> {
        let t = self.forward_raw(col, y)?;
        let s = &self.post_standardize;
        Ok((t - s.mean[col]) / s.std[col])
    }

    pub fn inverse(&self, col: usize, z: f64) -> Result<f64> {
        let s = &self.post_standardize;
        let t = z * s.std[col] + s.mean[col];
        inv_boxcox(t, self.lambda[col])
            .map(|v| v - self.shift[col])
            .ok_or(Error::Domain { column: col, value: z })
    }

    /// Inverse that maps values below the image to the lower edge of the
    /// original domain (`-shift`) and values above it to the largest finite
    /// representable value.
    pub fn inverse_clamped(&self, col: usize, z: f64) -> (f64, bool) {
        match self.inverse(col, z) {
            Ok(v) => (v, false),
            Err(_) => {
                let below = self.lambda[col] > 0.0;
                let v = if below { -self.shift[col] } else { f64::MAX };
                (v, true)
            }
        }
    }

    pub fn apply(&self, y: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(y)?;
        let mut out = Array2::zeros(y.raw_dim());
        for ((i, j), v) in y.indexed_iter() {
            out[[i, j]] = self.forward(j, *v)?;
        }
        Ok(out)
    }

    pub fn invert(&self, z: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(z)?;
        let mut out = Array2::zeros(z.raw_dim());
        for ((i, j), v) in z.indexed_iter() {
            out[[i, j]] = self.inverse(j, *v)?;
        }
        Ok(out)
    }

    /// Quantile `p`-level of the back-transformed Gaussian `N(mean, sd²)`
    /// (exact, because the inverse map is monotone).
    pub fn quantile(&self, col: usize, mean: f64, sd: f64, z_p: f64) -> f64 {
        self.inverse_clamped(col, mean + sd * z_p).0
    }

    /// Mean and variance in original units of `N(mean, variance)` given in
    /// standardised transformed space, by Gauss–Hermite quadrature.
    pub fn pushforward(&self, col: usize, mean: f64, variance: f64) -> Result<Pushforward> {
        self.pushforward_with(col, mean, variance, DEFAULT_QUADRATURE_NODES)
    }

    pub fn pushforward_with(
        &self,
        col: usize,
        mean: f64,
        variance: f64,
        nodes: usize,
    ) -> Result<Pushforward> {
        if !(variance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "latent variance must be >= 0, got {variance}"
            )));
        }
        if variance == 0.0 {
            let (m, clipped) = self.inverse_clamped(col, mean);
            return Ok(Pushforward {
                mean: m,
                variance: 0.0,
                clipped,
            });
        }
        let (xs, ws) = gauss_hermite(nodes);
        let sd = variance.sqrt();
        let mut kept = Vec::with_capacity(nodes);
        for (x, w) in xs.iter().zip(&ws) {
            if let Ok(v) = self.inverse(col, mean + std::f64::consts::SQRT_2 * sd * x) {
                kept.push((*w, v));
            }
        }
        let clipped = kept.len() < nodes;
        let w_sum: f64 = kept.iter().map(|(w, _)| w).sum();
        if kept.is_empty() {
            let (m, _) = self.inverse_clamped(col, mean);
            return Ok(Pushforward {
                mean: m,
                variance: 0.0,
                clipped: true,
            });
        }
        let m = kept.iter().map(|(w, v)| w * v).sum::<f64>() / w_sum;
        let var = kept.iter().map(|(w, v)| w * (v - m) * (v - m)).sum::<f64>() / w_sum;
        Ok(Pushforward {
            mean: m,
            variance: var,
            clipped,
        })
    }
}

/// Complete preprocessing state fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformPipeline {
    pub input: StandardizeParams,
    pub output: BoxCoxParams,
}

impl TransformPipeline {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        Ok(Self {
            input: StandardizeParams::fit(&ds.x.view(), &ds.input_names)?,
            output: BoxCoxParams::fit(&ds.y.view(), &ds.output_names)?,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.input.dim()
    }

    pub fn n_outputs(&self) -> usize {
        self.output.dim()
    }

    /// `(X_std, Y_transformed)` for training.
    pub fn transform(&self, ds: &Dataset) -> Result<(Array2<f64>, Array2<f64>)> {
        Ok((
            self.input.apply(&ds.x.view())?,
            self.output.apply(&ds.y.view())?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|j| format!("c{j}")).collect()
    }

    fn identity_boxcox(lambda: f64) -> BoxCoxParams {
        BoxCoxParams {
            lambda: vec![lambda],
            shift: vec![0.0],
            post_standardize: StandardizeParams::identity(1),
        }
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let x = array![[1.0, 0.0], [1.0, 2.0], [1.0, 3.0]];
        let err = StandardizeParams::fit(&x.view(), &["flat".into(), "ok".into()]).unwrap_err();
        assert!(matches!(err, Error::DegenerateColumn { ref column } if column == "flat"));
    }

    #[test]
    fn standardize_two_points() {
        let p = StandardizeParams::fit(&array![[0.0], [2.0]].view(), &names(1)).unwrap();
        assert_eq!(p.mean, vec![1.0]);
        assert_relative_eq!(p.std[0], 2f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn standardize_refit_is_idempotent() {
        let x = array![[1.0], [4.0], [9.0], [-3.0]];
        let p = StandardizeParams::fit(&x.view(), &names(1)).unwrap();
        let z = p.apply(&x.view()).unwrap();
        let q = StandardizeParams::fit(&z.view(), &names(1)).unwrap();
        assert_abs_diff_eq!(q.mean[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(q.std[0], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn standardize_arithmetic_and_round_trip() {
        let id = StandardizeParams::identity(2);
        let x = array![[3.0, -1.5], [0.25, 7.0]];
        assert_eq!(id.apply(&x.view()).unwrap(), x);
        let p = StandardizeParams {
            mean: vec![1.0],
            std: vec![2.0],
        };
        assert_eq!(p.apply(&array![[3.0]].view()).unwrap(), array![[1.0]]);
        let q = StandardizeParams {
            mean: vec![10.0, -2.0],
            std: vec![0.3, 40.0],
        };
        let back = q.invert(&q.apply(&x.view()).unwrap().view()).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        assert!(matches!(
            q.apply(&array![[1.0]].view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn boxcox_formula_points() {
        // λ=1: y − 1
        assert_relative_eq!(boxcox(3.5, 1.0), 2.5, max_relative = 1e-15);
        // λ=0: log
        assert_relative_eq!(boxcox(std::f64::consts::E, 0.0), 1.0, max_relative = 1e-15);
        let p = identity_boxcox(0.0);
        assert_relative_eq!(
            p.forward_raw(0, std::f64::consts::E).unwrap(),
            1.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn fit_requires_three_rows() {
        let y = array![[1.0], [2.0]];
        assert!(matches!(
            BoxCoxParams::fit(&y.view(), &names(1)),
            Err(Error::InsufficientData { needed: 3, got: 2 })
        ));
    }

    /// Grid scan oracle on a 1e-3 lattice.
    fn grid_best(data: &[f64]) -> (f64, f64) {
        let mut best = (0.0, f64::NEG_INFINITY);
        for k in 0..=10_000 {
            let l = -5.0 + k as f64 * 1e-3;
            let v = boxcox_llf(data, l);
            if v > best.1 {
                best = (l, v);
            }
        }
        best
    }

    #[test]
    fn lognormal_column_fits_log_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y: Vec<f64> = (0..1000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z.exp()
            })
            .collect();
        let ya = Array1::from(y.clone()).insert_axis(Axis(1));
        let p = BoxCoxParams::fit(&ya.view(), &names(1)).unwrap();
        assert_eq!(p.shift[0], 0.0);
        let (grid_l, _) = grid_best(&y);
        assert!((-0.2..=0.2).contains(&grid_l), "oracle λ {grid_l}");
        assert!((-0.2..=0.2).contains(&p.lambda[0]), "λ {}", p.lambda[0]);
    }

    #[test]
    fn normal_column_fits_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let y: Vec<f64> = (0..1000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                10.0 + z
            })
            .collect();
        let ya = Array1::from(y.clone()).insert_axis(Axis(1));
        let p = BoxCoxParams::fit(&ya.view(), &names(1)).unwrap();
        let (grid_l, _) = grid_best(&y);
        assert!((0.7..=1.3).contains(&grid_l), "oracle λ {grid_l}");
        assert!((0.7..=1.3).contains(&p.lambda[0]), "λ {}", p.lambda[0]);
    }

    #[test]
    fn shift_makes_values_positive() {
        let y = array![[-3.0], [0.0], [2.0], [5.0]];
        let p = BoxCoxParams::fit(&y.view(), &names(1)).unwrap();
        assert!(y.iter().all(|v| v + p.shift[0] > 0.0));
        assert_relative_eq!(p.shift[0], 3.0 + 8e-6, max_relative = 1e-12);
        let z = p.apply(&y.view()).unwrap();
        let back = p.invert(&z.view()).unwrap();
        for (a, b) in back.iter().zip(&y) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn lambda_one_is_affine() {
        let p = identity_boxcox(1.0);
        let y = array![[0.5], [2.0], [7.0]];
        assert_eq!(p.apply(&y.view()).unwrap(), array![[-0.5], [1.0], [6.0]]);
    }

    #[test]
    fn invert_outside_image_is_domain_error() {
        let p = identity_boxcox(0.5);
        // image of λ=0.5 is t > -2
        assert!(matches!(p.inverse(0, -2.5), Err(Error::Domain { .. })));
        let (v, clipped) = p.inverse_clamped(0, -2.5);
        assert!(clipped);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn pushforward_degenerate_and_affine() {
        let p = identity_boxcox(1.0);
        let pf = p.pushforward(0, 0.7, 0.0).unwrap();
        assert_eq!(pf.mean, p.inverse(0, 0.7).unwrap());
        assert_eq!(pf.variance, 0.0);
        let pf = p.pushforward(0, 10.0, 0.3).unwrap();
        assert_relative_eq!(pf.mean, 11.0, max_relative = 1e-12);
        assert_relative_eq!(pf.variance, 0.3, max_relative = 1e-10);
        assert!(!pf.clipped);
        assert!(p.pushforward(0, 0.0, -1.0).is_err());
    }

    #[test]
    fn pushforward_log_matches_lognormal_moments() {
        let p = identity_boxcox(0.0);
        let pf = p.pushforward(0, 0.0, 0.25).unwrap();
        let mean = 0.125f64.exp();
        let var = (0.25f64.exp() - 1.0) * 0.25f64.exp();
        assert_relative_eq!(pf.mean, mean, max_relative = 1e-6);
        assert_relative_eq!(pf.variance, var, max_relative = 1e-6);
    }

    #[test]
    fn pushforward_flags_truncated_nodes() {
        let p = identity_boxcox(1.0 / 3.0);
        // image is t > -3; mean -2.5 with sd 1 puts lower nodes outside
        let pf = p.pushforward(0, -2.5, 1.0).unwrap();
        assert!(pf.clipped);
        assert!(pf.mean.is_finite() && pf.variance >= 0.0);
    }

    #[test]
    fn pipeline_fit_and_transform() {
        let x = array![[0.0, 1.0], [1.0, 3.0], [2.0, 2.0], [3.0, 0.0]];
        let y = array![[1.0, 5.0], [2.0, 3.0], [4.0, 4.0], [8.0, 1.0]];
        let ds = Dataset::new(x, y, names(2), names(2)).unwrap();
        let tp = TransformPipeline::fit(&ds).unwrap();
        let (xs, ys) = tp.transform(&ds).unwrap();
        for col in xs.columns().into_iter().chain(ys.columns()) {
            assert_abs_diff_eq!(col.sum(), 0.0, epsilon = 1e-12);
        }
    }
}
