//! Version-tagged JSON container for a trained forecaster.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{GridLstmModel, ModelConfig};
use super::train::{Forecaster, TrainConfig};
use super::TemporalError;
use crate::numerics::NormalizationParams;

pub const CHECKPOINT_FORMAT: &str = "cityagent.grid-lstm";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub param_count: usize,
    pub train_config: TrainConfig,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub target_column: usize,
    pub window: usize,
    pub normalization: NormalizationParams,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(forecaster: &Forecaster, train_config: &TrainConfig) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: forecaster.model.config().clone(),
            param_count: forecaster.model.param_count(),
            train_config: train_config.clone(),
            seed: train_config.seed,
            feature_names: forecaster.feature_names.clone(),
            target_column: forecaster.target_column,
            window: forecaster.window,
            normalization: forecaster.normalization.clone(),
            params: forecaster.model.params().to_vec(),
        }
    }

    /// Rebuilds the forecaster, checking the header and every shape.
    pub fn into_forecaster(self) -> Result<Forecaster, TemporalError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(TemporalError::Checkpoint(format!(
                "unknown format {:?}",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(TemporalError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.params.len() != self.param_count {
            return Err(TemporalError::Checkpoint(format!(
                "header declares {} parameters, body has {}",
                self.param_count,
                self.params.len()
            )));
        }
        let n = self.model.features;
        if self.feature_names.len() != n
            || self.normalization.columns() != n
            || self.target_column >= n
        {
            return Err(TemporalError::Checkpoint(
                "feature names, normalization and target column disagree with the model".into(),
            ));
        }
        let model = GridLstmModel::from_params(self.model, self.params)?;
        Ok(Forecaster {
            model,
            normalization: self.normalization,
            feature_names: self.feature_names,
            target_column: self.target_column,
            window: self.window,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TemporalError> {
        serde_json::from_str(text).map_err(|e| TemporalError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), TemporalError> {
        std::fs::write(path, self.to_json()).map_err(|e| TemporalError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TemporalError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| TemporalError::Checkpoint(e.to_string()))?;
        Self::from_json(&text)
    }
}
