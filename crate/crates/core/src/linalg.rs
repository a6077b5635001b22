//! Dense Cholesky helpers for the small symmetric systems in the GP code.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

pub const BASE_JITTER: f64 = 1e-8;
pub const MAX_JITTER: f64 = 1e-4;

/// Lower Cholesky factor, or `None` if the matrix is not numerically positive definite.
pub fn cholesky(a: &ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

/// Cholesky of `a + jitter·I`, starting at [`BASE_JITTER`] and escalating ×10
/// up to [`MAX_JITTER`]. Returns the factor and the jitter that was used.
pub fn jittered_cholesky(a: &ArrayView2<f64>) -> Result<(Array2<f64>, f64)> {
    let mut jitter = BASE_JITTER;
    loop {
        let mut aj = a.to_owned();
        aj.diag_mut().mapv_inplace(|v| v + jitter);
        if let Some(l) = cholesky(&aj.view()) {
            return Ok((l, jitter));
        }
        jitter *= 10.0;
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::IllConditioned {
                max_jitter: MAX_JITTER,
            });
        }
    }
}

/// Solves `L X = B` for lower-triangular `L`.
pub fn solve_lower(l: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in 0..n {
        let lii = l[[i, i]];
        let (done, mut rest) = x.view_mut().split_at(Axis(0), i);
        let mut row = rest.row_mut(0);
        for k in 0..i {
            let lik = l[[i, k]];
            if lik != 0.0 {
                row.scaled_add(-lik, &done.row(k));
            }
        }
        row.mapv_inplace(|v| v / lii);
    }
    x
}

/// Solves `Lᵀ X = B` for lower-triangular `L`.
pub fn solve_lower_t(l: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in (0..n).rev() {
        let lii = l[[i, i]];
        let (mut head, tail) = x.view_mut().split_at(Axis(0), i + 1);
        let mut row = head.row_mut(i);
        for k in (i + 1)..n {
            let lki = l[[k, i]];
            if lki != 0.0 {
                row.scaled_add(-lki, &tail.row(k - i - 1));
            }
        }
        row.mapv_inplace(|v| v / lii);
    }
    x
}

pub fn solve_lower_vec(l: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Array1<f64> {
    let col = b.to_owned().insert_axis(Axis(1));
    solve_lower(l, &col.view()).remove_axis(Axis(1))
}

/// `A⁻¹ B` given the lower Cholesky factor of `A`.
pub fn cho_solve(l: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    solve_lower_t(l, &solve_lower(l, b).view())
}

pub fn cho_solve_vec(l: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Array1<f64> {
    let col = b.to_owned().insert_axis(Axis(1));
    cho_solve(l, &col.view()).remove_axis(Axis(1))
}

/// `A⁻¹` from the lower Cholesky factor of `A`, symmetrised.
pub fn cho_inverse(l: &ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = cho_solve(l, &Array2::eye(n).view());
    symmetrize(&mut inv);
    inv
}

/// `log |A|` from the lower Cholesky factor of `A`.
pub fn cho_logdet(l: &ArrayView2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>()
}

pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn spd() -> Array2<f64> {
        array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]]
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = spd();
        let l = cholesky(&a.view()).unwrap();
        assert_abs_diff_eq!(l.dot(&l.t()), a, epsilon = 1e-12);
        assert!(cholesky(&array![[1.0, 2.0], [2.0, 1.0]].view()).is_none());
    }

    #[test]
    fn solves_and_inverse() {
        let a = spd();
        let l = cholesky(&a.view()).unwrap();
        let b = array![[1.0, 0.0], [2.0, -1.0], [0.5, 3.0]];
        let x = cho_solve(&l.view(), &b.view());
        assert_abs_diff_eq!(a.dot(&x), b, epsilon = 1e-12);
        let lx = solve_lower(&l.view(), &b.view());
        assert_abs_diff_eq!(l.dot(&lx), b, epsilon = 1e-12);
        let ltx = solve_lower_t(&l.view(), &b.view());
        assert_abs_diff_eq!(l.t().dot(&ltx), b, epsilon = 1e-12);
        let inv = cho_inverse(&l.view());
        assert_abs_diff_eq!(a.dot(&inv), Array2::eye(3), epsilon = 1e-12);
        // det = 4*(15-1) - 2*(6-0.6) + 0.6*(2-3)
        let det: f64 = 4.0 * 14.0 - 2.0 * 5.4 + 0.6 * (2.0 - 3.0);
        assert_abs_diff_eq!(cho_logdet(&l.view()), det.ln(), epsilon = 1e-12);
    }

    #[test]
    fn jitter_escalates_then_fails() {
        // rank-deficient PSD: fixed by a small jitter
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let (_, jitter) = jittered_cholesky(&a.view()).unwrap();
        assert!(jitter >= BASE_JITTER && jitter <= MAX_JITTER);
        let bad = array![[1.0, 0.0], [0.0, -1.0]];
        assert!(matches!(
            jittered_cholesky(&bad.view()),
            Err(Error::IllConditioned { .. })
        ));
    }
}
