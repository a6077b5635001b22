//! Self-describing JSON container for trained models.

use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::bnn::BnnModel;
use crate::design_space::DesignSpace;
use crate::error::{Error, Result};
use crate::predictive::{PredictOptions, PredictiveDistribution, Surrogate};
use crate::router::ThresholdPolicy;
use crate::svgp::SvgpModel;
use crate::transforms::BoxCoxParams;

pub const FORMAT: &str = "surrogate-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum TrainedModel {
    Bnn(BnnModel),
    Svgp(SvgpModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub format_version: u32,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_space: Option<DesignSpace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_policy: Option<ThresholdPolicy>,
    pub model: TrainedModel,
}

impl ModelArtifact {
    pub fn new(model: TrainedModel, design_space: Option<DesignSpace>) -> Self {
        Self {
            format: FORMAT.into(),
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            design_space,
            threshold_policy: None,
            model,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.model {
            TrainedModel::Bnn(_) => "bnn",
            TrainedModel::Svgp(_) => "svgp",
        }
    }

    fn inner(&self) -> &dyn Surrogate {
        match &self.model {
            TrainedModel::Bnn(m) => m,
            TrainedModel::Svgp(m) => m,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(text)?;
        if a.format != FORMAT {
            return Err(Error::Parse(format!("not a model artifact (format `{}`)", a.format)));
        }
        if a.format_version != FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported artifact version {}", a.format_version)));
        }
        Ok(a)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Surrogate for ModelArtifact {
    fn model_id(&self) -> String {
        self.inner().model_id()
    }

    fn input_names(&self) -> &[String] {
        self.inner().input_names()
    }

    fn output_names(&self) -> &[String] {
        self.inner().output_names()
    }

    fn output_transform(&self) -> Option<&BoxCoxParams> {
        self.inner().output_transform()
    }

    fn predict_batch(&self, x: &ArrayView2<f64>, opts: &PredictOptions) -> Result<Vec<PredictiveDistribution>> {
        self.inner().predict_batch(x, opts)
    }
}
