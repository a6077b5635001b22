use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InducingInit {
    #[default]
    RandomSubset,
    Kmeans,
}

impl std::str::FromStr for InducingInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "random_subset" | "random-subset" => Ok(Self::RandomSubset),
            "kmeans" => Ok(Self::Kmeans),
            other => Err(Error::InvalidArgument(format!(
                "unknown inducing-point strategy `{other}`"
            ))),
        }
    }
}

const KMEANS_ITERS: usize = 50;

/// Chooses `m` inducing locations from the rows of `x`.
pub fn init_inducing(x: &ArrayView2<f64>, m: usize, strategy: InducingInit, seed: u64) -> Result<Array2<f64>> {
    let n = x.nrows();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "inducing point count must be in [1, {n}], got {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = sample(&mut rng, n, m).into_vec();
    let start = x.select(Axis(0), &idx);
    match strategy {
        InducingInit::RandomSubset => Ok(start),
        InducingInit::Kmeans => Ok(lloyd(x, start)),
    }
}

fn lloyd(x: &ArrayView2<f64>, mut centers: Array2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let k = centers.nrows();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (i, row) in x.outer_iter().enumerate() {
            let best = (0..k)
                .map(|c| {
                    let dist: f64 = row
                        .iter()
                        .zip(centers.row(c))
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    (c, dist)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(c, _)| c)
                .unwrap_or(0);
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, row) in x.outer_iter().enumerate() {
            let mut s = sums.row_mut(assign[i]);
            s += &row;
            counts[assign[i]] += 1;
        }
        for c in 0..k {
            // empty clusters keep their previous centre
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centers.row_mut(c).assign(&mean);
            }
        }
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn data() -> Array2<f64> {
        Array2::from_shape_fn((30, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0)
    }

    #[test]
    fn full_subset_is_a_permutation_of_rows() {
        let x = data();
        let z = init_inducing(&x.view(), 30, InducingInit::RandomSubset, 4).unwrap();
        let mut a: Vec<Vec<u64>> = x.outer_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        let mut b: Vec<Vec<u64>> = z.outer_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn single_kmeans_centre_is_column_mean() {
        let x = data();
        let z = init_inducing(&x.view(), 1, InducingInit::Kmeans, 9).unwrap();
        let mean = x.mean_axis(Axis(0)).unwrap();
        for j in 0..3 {
            assert!((z[[0, j]] - mean[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_repeat_is_identical() {
        let x = data();
        for s in [InducingInit::RandomSubset, InducingInit::Kmeans] {
            let a = init_inducing(&x.view(), 7, s, 11).unwrap();
            let b = init_inducing(&x.view(), 7, s, 11).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_too_many_points() {
        let x = array![[0.0], [1.0]];
        assert!(init_inducing(&x.view(), 3, InducingInit::RandomSubset, 0).is_err());
        assert!(init_inducing(&x.view(), 0, InducingInit::RandomSubset, 0).is_err());
    }

    #[test]
    fn kmeans_separates_two_clusters() {
        let x = array![[0.0], [0.1], [0.2], [10.0], [10.1], [10.2]];
        let mut z = init_inducing(&x.view(), 2, InducingInit::Kmeans, 1).unwrap().column(0).to_vec();
        z.sort_by(f64::total_cmp);
        assert!((z[0] - 0.1).abs() < 1e-12 && (z[1] - 10.1).abs() < 1e-12);
    }
}
