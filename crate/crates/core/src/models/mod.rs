//! Element classifiers: extremely randomised trees and a feedforward network.
//!
//! Both produce a probability that an element needs rework; a threshold turns
//! it into a label. Trained models are saved as versioned JSON documents that
//! carry the feature layout they were trained on.

pub mod extratrees;
pub mod fnn;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Dataset, FeatureConfig};
use crate::mesh::Label;

pub use extratrees::{train_extratrees, ExtraTreesModel};
pub use fnn::{gradient_check, train_fnn, FnnModel, TrainingReport};

/// Version tag of model files.
pub const MODEL_FORMAT_TAG: &str = "meshgrade-model/v1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data is empty")]
    EmptyDataset,
    #[error("feature vector has length {found}, model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("training diverged: non-finite loss in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported model file version {found:?}, expected {MODEL_FORMAT_TAG:?}")]
    Version { found: String },
    #[error("corrupted model file: {0}")]
    Corrupt(String),
    #[error("inconsistent model: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    ExtraTrees,
    Fnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ExtraTrees => "extratrees",
            ModelKind::Fnn => "fnn",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "extratrees" => Some(ModelKind::ExtraTrees),
            "fnn" => Some(ModelKind::Fnn),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtraTreesParams {
    pub n_trees: usize,
    /// Attributes drawn per split; `None` means `round(√D)`.
    pub attributes_per_split: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for ExtraTreesParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            attributes_per_split: None,
            min_samples_split: 2,
        }
    }
}

impl ExtraTreesParams {
    pub fn attributes_for(&self, dim: usize) -> usize {
        self.attributes_per_split
            .unwrap_or_else(|| (dim as f64).sqrt().round() as usize)
            .clamp(1, dim.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FnnParams {
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Indices of hidden layers followed by batch normalisation.
    pub batch_norm_after: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for FnnParams {
    fn default() -> Self {
        Self {
            hidden: vec![64, 128, 16],
            batch_norm_after: vec![0, 1],
            learning_rate: 0.01,
            batch_size: 256,
            max_epochs: 50,
            patience: 5,
            validation_fraction: 0.1,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub seed: u64,
    pub extratrees: ExtraTreesParams,
    pub fnn: FnnParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::ExtraTrees,
            seed: 0,
            extratrees: ExtraTreesParams::default(),
            fnn: FnnParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn extratrees(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn fnn(seed: u64) -> Self {
        Self {
            kind: ModelKind::Fnn,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_owned()));
        let t = &self.extratrees;
        if t.n_trees == 0 || t.min_samples_split == 0 || t.attributes_per_split == Some(0) {
            return bad("tree counts must be positive");
        }
        let f = &self.fnn;
        if f.hidden.is_empty() || f.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if f.batch_norm_after.iter().any(|&i| i >= f.hidden.len()) {
            return bad("batch normalisation index out of range");
        }
        if f.batch_size == 0 || f.max_epochs == 0 || f.patience == 0 {
            return bad("batch size, epochs and patience must be positive");
        }
        if !(f.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..=0.5).contains(&f.validation_fraction) {
            return bad("validation fraction must lie in [0, 0.5]");
        }
        if !(f.bn_epsilon > 0.0) || !(0.0..1.0).contains(&f.bn_momentum) {
            return bad("batch normalisation epsilon/momentum out of range");
        }
        Ok(())
    }
}

/// Rework iff `prob >= threshold`.
pub fn apply_threshold(prob: f64, threshold: f64) -> Label {
    Label::from_flag(prob >= threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    ExtraTrees(ExtraTreesModel),
    Fnn(FnnModel),
}

impl Model {
    pub fn train(data: &Dataset, config: &TrainConfig) -> Result<Self, ModelError> {
        Ok(match config.kind {
            ModelKind::ExtraTrees => Model::ExtraTrees(train_extratrees(data, config)?),
            ModelKind::Fnn => Model::Fnn(train_fnn(data, config)?.0),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::ExtraTrees(_) => ModelKind::ExtraTrees,
            Model::Fnn(_) => ModelKind::Fnn,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::ExtraTrees(m) => m.dim,
            Model::Fnn(m) => m.dim,
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ModelError> {
        match self {
            Model::ExtraTrees(m) => m.predict_proba(x),
            Model::Fnn(m) => m.predict_proba(x),
        }
    }

    /// Probabilities for a row-major matrix of `dim`-length rows.
    pub fn predict_many(&self, values: &[f64]) -> Result<Vec<f64>, ModelError> {
        let dim = self.dim();
        if dim == 0 || values.len() % dim != 0 {
            return Err(ModelError::Dimension {
                expected: dim,
                found: values.len(),
            });
        }
        match self {
            Model::ExtraTrees(m) => values.chunks(dim).map(|x| m.predict_proba(x)).collect(),
            Model::Fnn(m) => m.predict_batch(values),
        }
    }

    fn check(&self) -> Result<(), ModelError> {
        match self {
            Model::ExtraTrees(m) => m.check(),
            Model::Fnn(m) => m.check(),
        }
    }
}

/// A model together with the feature layout it consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub features: FeatureConfig,
    pub model: Model,
}

impl ModelFile {
    pub fn new(features: FeatureConfig, model: Model) -> Self {
        Self {
            format: MODEL_FORMAT_TAG.to_owned(),
            features,
            model,
        }
    }
}

pub fn save_model(file: &ModelFile) -> String {
    serde_json::to_string(file).expect("model serializes")
}

pub fn load_model(text: &str) -> Result<ModelFile, ModelError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ModelError::Corrupt(e.to_string()))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(MODEL_FORMAT_TAG) => {}
        Some(other) => {
            return Err(ModelError::Version {
                found: other.to_owned(),
            })
        }
        None => return Err(ModelError::Corrupt("missing format tag".into())),
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| ModelError::Corrupt(e.to_string()))?;
    if file.model.dim() != file.features.dimension() {
        return Err(ModelError::Inconsistent(format!(
            "model dimension {} does not match feature layout dimension {}",
            file.model.dim(),
            file.features.dimension()
        )));
    }
    file.model.check()?;
    Ok(file)
}

pub fn save_model_file(path: impl AsRef<Path>, file: &ModelFile) -> Result<(), ModelError> {
    std::fs::write(path, save_model(file))?;
    Ok(())
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<ModelFile, ModelError> {
    load_model(&std::fs::read_to_string(path)?)
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<(), ModelError> {
    if x.len() != expected {
        return Err(ModelError::Dimension {
            expected,
            found: x.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_are_inclusive() {
        assert_eq!(apply_threshold(0.6, 0.5), Label::Rework);
        assert_eq!(apply_threshold(0.2, 0.25), Label::Passed);
        assert_eq!(apply_threshold(0.5, 0.5), Label::Rework);
        assert_eq!(apply_threshold(1.0, 1.0), Label::Rework);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::fnn(1);
        c.fnn.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::fnn(1);
        c.fnn.validation_fraction = 0.6;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.extratrees.n_trees = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_attribute_count() {
        let p = ExtraTreesParams::default();
        assert_eq!(p.attributes_for(84), 9);
        assert_eq!(p.attributes_for(105), 10);
        assert_eq!(p.attributes_for(1), 1);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = r#"{"format": "meshgrade-model/v0", "features": {}, "model": {}}"#;
        assert!(matches!(load_model(text), Err(ModelError::Version { .. })));
        assert!(matches!(load_model("[1, 2"), Err(ModelError::Corrupt(_))));
    }
}
