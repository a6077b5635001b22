//! Dataset files: a CSV plus a small JSON sidecar recording the input count.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use surrogate_core::{Dataset, DesignSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_inputs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<DesignSpace>,
}

/// `data.csv` → `data.csv.meta.json`.
pub fn meta_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_dataset(ds: &Dataset, path: &Path, seed: Option<u64>) -> Result<()> {
    ds.write_csv(path)?;
    let meta = DatasetMeta {
        n_inputs: ds.n_inputs(),
        seed,
        space: ds.space.clone(),
    };
    let mp = meta_path(path);
    std::fs::write(&mp, serde_json::to_string_pretty(&meta)?)
        .with_context(|| format!("writing {}", mp.display()))?;
    Ok(())
}

/// Reads a dataset; the sidecar wins over `n_inputs` when present.
pub fn read_dataset(path: &Path, n_inputs: Option<usize>) -> Result<Dataset> {
    let mp = meta_path(path);
    let meta: Option<DatasetMeta> = if mp.exists() {
        let text = std::fs::read_to_string(&mp).with_context(|| format!("reading {}", mp.display()))?;
        Some(serde_json::from_str(&text).map_err(surrogate_core::Error::from)?)
    } else {
        None
    };
    let n = match (&meta, n_inputs) {
        (Some(m), _) => m.n_inputs,
        (None, Some(n)) => n,
        (None, None) => {
            return Err(surrogate_core::Error::InvalidArgument(format!(
                "{} has no metadata sidecar; pass --n-inputs",
                path.display()
            ))
            .into())
        }
    };
    let ds = Dataset::read_csv(path, n)?;
    Ok(match meta.and_then(|m| m.space) {
        Some(space) => ds.with_space(space)?,
        None => ds,
    })
}
