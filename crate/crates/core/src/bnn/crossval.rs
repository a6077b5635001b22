use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BnnArchitecture, BnnModel, TrainConfig};
use crate::design_space::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::r2;

/// Hyper-parameter grid; every combination is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub n_layers: Vec<usize>,
    pub n_neurons: Vec<usize>,
    pub dropout: Vec<f64>,
}

impl Default for CvGrid {
    fn default() -> Self {
        Self {
            n_layers: vec![1, 2, 3],
            n_neurons: vec![256, 512, 1024],
            dropout: vec![0.05, 0.10, 0.20],
        }
    }
}

impl CvGrid {
    pub fn architectures(&self, n_inputs: usize, n_outputs: usize) -> Vec<BnnArchitecture> {
        let mut out = Vec::new();
        for &layers in &self.n_layers {
            for &width in &self.n_neurons {
                for &p in &self.dropout {
                    out.push(
                        BnnArchitecture::new(n_inputs, n_outputs)
                            .with_hidden(vec![width; layers])
                            .with_dropout(p),
                    );
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub hidden_layers: Vec<usize>,
    pub dropout_p: f64,
    /// Validation R² per fold, averaged over outputs.
    pub fold_r2: Vec<f64>,
    pub mean_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValResult {
    pub folds: usize,
    pub table: Vec<CvRow>,
    pub best: BnnArchitecture,
}

/// Seeded k-fold partition of `0..n` into `k` near-equal validation folds.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "fold count must be in [2, {n}], got {k}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        folds.push(idx[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

/// k-fold cross-validation of every grid architecture; scores are the MC
/// predictive mean's R² in original units, averaged over outputs and folds.
pub fn cross_validate(
    ds: &Dataset,
    grid: &CvGrid,
    k: usize,
    config: &TrainConfig,
    mc_samples: usize,
    seed: u64,
) -> Result<CrossValResult> {
    let folds = kfold_indices(ds.len(), k, seed)?;
    if folds.iter().any(|f| f.len() < 2 || ds.len() - f.len() < 3) {
        return Err(Error::InvalidArgument(
            "every validation fold needs >= 2 rows and every training split >= 3".into(),
        ));
    }
    let archs = grid.architectures(ds.n_inputs(), ds.n_outputs());
    if archs.is_empty() {
        return Err(Error::InvalidArgument("empty hyper-parameter grid".into()));
    }
    let mut table = Vec::with_capacity(archs.len());
    for arch in &archs {
        let mut fold_r2 = Vec::with_capacity(k);
        for (f, val) in folds.iter().enumerate() {
            let train_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            let train = ds.select_rows(&train_idx);
            let valid = ds.select_rows(val);
            let model = BnnModel::init(arch.clone(), seed.wrapping_add(f as u64))?.train(&train, config)?;
            let preds = model.predict_mc(&valid.x.view(), mc_samples, seed)?;
            let mut score = 0.0;
            for o in 0..ds.n_outputs() {
                let yhat: Vec<f64> = preds.iter().map(|p| p.mean[o]).collect();
                let y: Vec<f64> = valid.y.column(o).to_vec();
                score += r2(&y, &yhat)?;
            }
            fold_r2.push(score / ds.n_outputs() as f64);
        }
        let mean_r2 = fold_r2.iter().sum::<f64>() / k as f64;
        table.push(CvRow {
            hidden_layers: arch.hidden_layers.clone(),
            dropout_p: arch.dropout_p,
            fold_r2,
            mean_r2,
        });
    }
    let best_idx = table
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.mean_r2.total_cmp(&b.1.mean_r2))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    Ok(CrossValResult {
        folds: k,
        best: archs[best_idx].clone(),
        table,
    })
}
