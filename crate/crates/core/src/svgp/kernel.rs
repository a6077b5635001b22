use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Matern32,
    SquaredExponential,
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matern32" => Ok(Self::Matern32),
            "squared_exponential" | "se" | "rbf" => Ok(Self::SquaredExponential),
            other => Err(Error::InvalidArgument(format!("unknown kernel `{other}`"))),
        }
    }
}

/// Stationary ARD kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub variance: f64,
    pub lengthscales: Vec<f64>,
}

impl Kernel {
    pub fn new(kind: KernelKind, variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if !(variance > 0.0) || lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidArgument(
                "kernel variance and lengthscales must be positive".into(),
            ));
        }
        Ok(Self {
            kind,
            variance,
            lengthscales,
        })
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Scaled distance `r = ‖(a − b)/ℓ‖`.
    pub(crate) fn scaled_sq_dist(&self, a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum()
    }

    pub(crate) fn of_r(&self, r: f64) -> f64 {
        match self.kind {
            KernelKind::Matern32 => self.variance * (1.0 + SQRT3 * r) * (-SQRT3 * r).exp(),
            KernelKind::SquaredExponential => self.variance * (-0.5 * r * r).exp(),
        }
    }

    /// `φ(r)` such that `∂k/∂a_j = −φ·(a_j − b_j)/ℓ_j²` and
    /// `∂k/∂log ℓ_j = φ·((a_j − b_j)/ℓ_j)²`.
    pub(crate) fn grad_factor(&self, r: f64) -> f64 {
        match self.kind {
            KernelKind::Matern32 => 3.0 * self.variance * (-SQRT3 * r).exp(),
            KernelKind::SquaredExponential => self.variance * (-0.5 * r * r).exp(),
        }
    }

    pub fn eval(&self, a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> Result<f64> {
        if a.len() != self.dim() || b.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "kernel input",
                expected: self.dim(),
                got: if a.len() != self.dim() { a.len() } else { b.len() },
            });
        }
        Ok(self.of_r(self.scaled_sq_dist(a, b).sqrt()))
    }

    pub fn matrix(&self, a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if a.ncols() != self.dim() || b.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "kernel input",
                expected: self.dim(),
                got: if a.ncols() != self.dim() { a.ncols() } else { b.ncols() },
            });
        }
        let mut k = Array2::zeros((a.nrows(), b.nrows()));
        for (i, ra) in a.outer_iter().enumerate() {
            for (j, rb) in b.outer_iter().enumerate() {
                k[[i, j]] = self.of_r(self.scaled_sq_dist(&ra, &rb).sqrt());
            }
        }
        Ok(k)
    }

    /// Symmetric `K(A, A)` computed on one triangle.
    pub fn gram(&self, a: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if a.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "kernel input",
                expected: self.dim(),
                got: a.ncols(),
            });
        }
        let n = a.nrows();
        let mut k = Array2::zeros((n, n));
        for i in 0..n {
            k[[i, i]] = self.variance;
            for j in 0..i {
                let v = self.of_r(self.scaled_sq_dist(&a.row(i), &a.row(j)).sqrt());
                k[[i, j]] = v;
                k[[j, i]] = v;
            }
        }
        Ok(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::jittered_cholesky;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_distance_gives_variance() {
        for kind in [KernelKind::Matern32, KernelKind::SquaredExponential] {
            let k = Kernel::new(kind, 2.5, vec![0.3, 4.0]).unwrap();
            let x = array![1.0, -2.0];
            assert_eq!(k.eval(&x.view(), &x.view()).unwrap(), 2.5);
        }
    }

    #[test]
    fn matern32_unit_distance() {
        let k = Kernel::new(KernelKind::Matern32, 1.0, vec![1.0]).unwrap();
        let v = k.eval(&array![0.0].view(), &array![1.0].view()).unwrap();
        let expect = (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp();
        assert_relative_eq!(v, expect, max_relative = 1e-15);
        assert!((v - 0.4834).abs() < 5e-5);
    }

    #[test]
    fn squared_exponential_closed_form() {
        let k = Kernel::new(KernelKind::SquaredExponential, 2.0, vec![0.5, 2.0]).unwrap();
        let v = k.eval(&array![0.0, 0.0].view(), &array![0.5, 2.0].view()).unwrap();
        // r² = 1 + 1
        assert_relative_eq!(v, 2.0 * (-1.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn gram_is_symmetric_psd_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_simple_fn((15, 3), || rng.random_range(-2.0..2.0));
        for kind in [KernelKind::Matern32, KernelKind::SquaredExponential] {
            let k = Kernel::new(kind, 1.3, vec![0.7, 1.1, 2.0]).unwrap();
            let g = k.gram(&a.view()).unwrap();
            assert_eq!(g, g.t());
            assert_eq!(g, k.matrix(&a.view(), &a.view()).unwrap());
            assert!(g.iter().all(|v| *v <= 1.3 + 1e-15));
            let (_, jitter) = jittered_cholesky(&g.view()).unwrap();
            assert_eq!(jitter, 1e-8);
        }
    }

    #[test]
    fn rejects_bad_hyperparameters_and_dimensions() {
        assert!(Kernel::new(KernelKind::Matern32, 0.0, vec![1.0]).is_err());
        assert!(Kernel::new(KernelKind::Matern32, 1.0, vec![-1.0]).is_err());
        let k = Kernel::new(KernelKind::Matern32, 1.0, vec![1.0, 1.0]).unwrap();
        assert!(k.eval(&array![1.0].view(), &array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn grad_factor_matches_finite_differences() {
        for kind in [KernelKind::Matern32, KernelKind::SquaredExponential] {
            let k = Kernel::new(kind, 1.7, vec![0.8, 1.9]).unwrap();
            let a = array![0.3, -0.4];
            let b = array![-0.5, 0.9];
            let r = k.scaled_sq_dist(&a.view(), &b.view()).sqrt();
            let phi = k.grad_factor(r);
            let h = 1e-6;
            for j in 0..2 {
                let mut ap = a.clone();
                ap[j] += h;
                let mut am = a.clone();
                am[j] -= h;
                let fd = (k.eval(&ap.view(), &b.view()).unwrap()
                    - k.eval(&am.view(), &b.view()).unwrap())
                    / (2.0 * h);
                let an = -phi * (a[j] - b[j]) / k.lengthscales[j].powi(2);
                assert_relative_eq!(fd, an, max_relative = 1e-7);
            }
        }
    }
}
