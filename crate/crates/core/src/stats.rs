//! Small statistical helpers shared by the transforms, evaluation and router.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Percentile with linear interpolation between closest ranks
/// (`rank = q/100 * (n - 1)`), the same convention as NumPy's default.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "percentile {q} outside [0, 100]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, q))
}

pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = q / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (divides by n).
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal is valid")
}

pub fn normal_cdf(z: f64) -> f64 {
    standard_normal().cdf(z)
}

pub fn normal_quantile(p: f64) -> f64 {
    let n = standard_normal();
    let x = n.inverse_cdf(p);
    if !x.is_finite() {
        return x;
    }
    // one Newton step polishes the library's approximation
    let d = n.pdf(x);
    if d > 0.0 { x - (n.cdf(x) - p) / d } else { x }
}

/// Gauss–Hermite rule for weight `exp(-x^2)`.
///
/// Nodes are returned in increasing order. `sum_k w_k f(x_k)` approximates
/// `∫ exp(-x^2) f(x) dx`; weights sum to `√π`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        // initial guesses for the largest roots first
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            // orthonormal Hermite recurrence
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.reverse();
    w.reverse();
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn percentile_linear_interpolation() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_relative_eq!(percentile(&v, 90.0).unwrap(), 90.1, epsilon = 1e-12);
        assert_eq!(percentile(&v, 100.0).unwrap(), 100.0);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&[3.0], 42.0).unwrap(), 3.0);
        assert!(percentile(&[], 50.0).is_err());
    }

    #[test]
    fn gauss_hermite_integrates_moments() {
        for n in [1, 2, 5, 21] {
            let (x, w) = gauss_hermite(n);
            let sum: f64 = w.iter().sum();
            assert_relative_eq!(sum, std::f64::consts::PI.sqrt(), max_relative = 1e-12);
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
        // ∫ e^{-x²} x² dx = √π / 2, ∫ e^{-x²} x⁴ dx = 3√π / 4
        let (x, w) = gauss_hermite(21);
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        let sp = std::f64::consts::PI.sqrt();
        assert_relative_eq!(m2, sp / 2.0, max_relative = 1e-12);
        assert_relative_eq!(m4, 3.0 * sp / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn normal_quantile_inverts_cdf() {
        for p in [0.05, 0.25, 0.5, 0.9, 0.975] {
            assert_relative_eq!(normal_cdf(normal_quantile(p)), p, epsilon = 1e-12);
        }
    }
}
