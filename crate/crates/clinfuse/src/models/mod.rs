//! Classifiers and imbalance handling: SMOTE, L2 logistic regression, a
//! balanced random forest, and a weighted-BCE MLP. Every trainer is
//! seeded and deterministic, and every model emits probabilities.

mod forest;
mod logreg;
mod mlp;
mod smote;

pub use forest::{train_balanced_forest, BalancedForest, ForestConfig};
pub use logreg::{train_logreg, LogRegModel};
pub use mlp::{train_mlp, wbce_loss, MlpConfig, MLPModel};
pub use smote::{smote, SmoteConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data contains a single class")]
    SingleClass,
    #[error("SMOTE needs at least {need} minority samples, got {have}")]
    TooFewMinority { have: usize, need: usize },
    #[error("input has dimension {got}, model expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("training diverged at epoch {epoch}: loss became non-finite")]
    Diverged { epoch: usize },
    #[error("labels and rows disagree: {rows} rows vs {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("model file malformed: {0}")]
    Malformed(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Any trained classifier, unified for persistence and prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    LogReg(LogRegModel),
    Forest(BalancedForest),
    Mlp(MLPModel),
}

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: Model,
}

impl Model {
    pub fn input_dim(&self) -> usize {
        match self {
            Model::LogReg(m) => m.weights.len(),
            Model::Forest(m) => m.input_dim,
            Model::Mlp(m) => m.input_dim(),
        }
    }

    /// Probability of class 1 for one row.
    pub fn predict_proba(&self, row: &[f64]) -> Result<f64, ModelError> {
        if row.len() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                got: row.len(),
                expected: self.input_dim(),
            });
        }
        Ok(match self {
            Model::LogReg(m) => m.predict_proba(row),
            Model::Forest(m) => m.predict_proba(row),
            Model::Mlp(m) => m.predict_proba(row),
        })
    }

    pub fn predict_many(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
        rows.iter().map(|r| self.predict_proba(r)).collect()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let file = ModelFile { format_version: MODEL_FORMAT_VERSION, model: self.clone() };
        std::fs::write(path, serde_json::to_string(&file).expect("model serializes"))?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Model, ModelError> {
        let data = std::fs::read_to_string(path)?;
        let file: ModelFile =
            serde_json::from_str(&data).map_err(|e| ModelError::Malformed(e.to_string()))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Malformed(format!(
                "unsupported model format {}",
                file.format_version
            )));
        }
        Ok(file.model)
    }
}

pub(crate) fn check_shapes(rows: &[Vec<f64>], labels: &[u8]) -> Result<(), ModelError> {
    if rows.len() != labels.len() {
        return Err(ModelError::LengthMismatch { rows: rows.len(), labels: labels.len() });
    }
    let has_pos = labels.iter().any(|&y| y == 1);
    let has_neg = labels.iter().any(|&y| y == 0);
    if !(has_pos && has_neg) {
        return Err(ModelError::SingleClass);
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
