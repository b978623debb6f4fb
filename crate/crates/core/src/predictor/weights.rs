//! Versioned JSON weights file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lstm::{Dims, LstmModel};
use super::Predictor;
use crate::error::{Error, Result};
use crate::state::NormStats;

pub const WEIGHTS_VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightsMetadata {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_mse: Option<f64>,
    pub train_samples: usize,
    pub scenarios: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub version: String,
    pub dims: Dims,
    pub history: usize,
    pub horizon: usize,
    pub tensors: Vec<NamedTensor>,
    pub norm_stats: NormStats,
    #[serde(default)]
    pub metadata: WeightsMetadata,
}

impl WeightsFile {
    pub fn from_predictor(p: &Predictor, metadata: WeightsMetadata) -> Self {
        Self {
            version: WEIGHTS_VERSION.to_string(),
            dims: p.model.dims(),
            history: p.history,
            horizon: p.horizon,
            tensors: p
                .model
                .tensors()
                .into_iter()
                .map(|(name, shape, data)| NamedTensor { name, shape, data: data.to_vec() })
                .collect(),
            norm_stats: p.stats.clone(),
            metadata,
        }
    }

    pub fn into_predictor(self) -> Result<Predictor> {
        if self.version != WEIGHTS_VERSION {
            return Err(Error::WeightsVersion { found: self.version, supported: WEIGHTS_VERSION.into() });
        }
        let reference = LstmModel::zeros(self.dims);
        let expected = reference.tensors();
        if expected.len() != self.tensors.len() {
            return Err(Error::Weights(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(reference.num_params());
        for ((name, shape, _), t) in expected.iter().zip(&self.tensors) {
            if *name != t.name || *shape != t.shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Weights(format!(
                    "tensor {:?} {:?} (len {}) does not match expected {name:?} {shape:?}",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
            params.extend_from_slice(&t.data);
        }
        let model = LstmModel::from_params(self.dims, params)?;
        Predictor::new(model, self.norm_stats, self.history, self.horizon)
    }
}

pub fn save_weights(path: &Path, predictor: &Predictor, metadata: WeightsMetadata) -> Result<()> {
    let file = WeightsFile::from_predictor(predictor, metadata);
    fs::write(path, serde_json::to_vec(&file)?)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<(Predictor, WeightsMetadata)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Weights(format!("{}: {e}", path.display())))?;
    // Check the version before the schema, so a newer file gets a version error.
    match value.get("version") {
        Some(serde_json::Value::String(v)) if v == WEIGHTS_VERSION => {}
        Some(other) => {
            let found = other.as_str().map_or_else(|| other.to_string(), str::to_string);
            return Err(Error::WeightsVersion { found, supported: WEIGHTS_VERSION.into() });
        }
        None => return Err(Error::Weights("missing version field".into())),
    }
    let file: WeightsFile =
        serde_json::from_value(value).map_err(|e| Error::Weights(format!("{}: {e}", path.display())))?;
    let metadata = file.metadata.clone();
    Ok((file.into_predictor()?, metadata))
}
