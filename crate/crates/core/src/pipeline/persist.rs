//! Versioned JSON model persistence.
//!
//! Every model file is a single JSON document with a `format_version` field
//! checked before anything else, optional provenance (config hash and seed),
//! and the model payload under a `kind`/`model` pair. Serialization is
//! deterministic — map keys are ordered and floats print in shortest
//! round-trip form — so saving the same model twice yields identical bytes,
//! and a loaded model predicts bit-identically to the one saved.

use crate::ensemble::{predict_stacked, EnsembleError, GlobalEntry, SegmentedEntry, StackedModel};
use crate::features::{assemble_features, DerivedDistances};
use crate::learners::ProbVector;
use crate::model::{CategoryMaps, ShipmentRecord};
use crate::segmented::predict_segmented;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Version written by [`save_model`]; [`load_model`] accepts only this.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("cannot parse model file: {0}")]
    Parse(String),
    #[error("model format version {found} is not supported (this build reads version {supported})")]
    UnsupportedVersion { found: u64, supported: u32 },
}

/// Any model the pipeline persists, with enough context to predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum AnyModel {
    /// A single learner plus the feature schema it was fit with.
    Global(GlobalEntry),
    /// Per-category local models with dispatch and fallback.
    Segmented(SegmentedEntry),
    /// A two-level stack.
    Stacked { name: String, stack: StackedModel },
}

impl AnyModel {
    pub fn name(&self) -> &str {
        match self {
            AnyModel::Global(e) => &e.name,
            AnyModel::Segmented(e) => &e.name,
            AnyModel::Stacked { name, .. } => name,
        }
    }

    /// Probability prediction for one record, whatever the model kind.
    pub fn predict_proba(
        &self,
        record: &ShipmentRecord,
        derived: &DerivedDistances,
        maps: &CategoryMaps,
    ) -> Result<ProbVector, EnsembleError> {
        match self {
            AnyModel::Global(e) => {
                let x = assemble_features(record, derived, &e.schema, maps)?;
                Ok(e.model.predict_proba(&x)?)
            }
            AnyModel::Segmented(e) => Ok(predict_segmented(&e.model, record, derived, maps)?),
            AnyModel::Stacked { stack, .. } => predict_stacked(stack, record, derived, maps),
        }
    }
}

/// Provenance stamped into pipeline artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    config_hash: Option<String>,
    seed: Option<u64>,
    #[serde(flatten)]
    model: AnyModel,
}

/// A model loaded from disk, with whatever provenance it carried.
#[derive(Debug)]
pub struct LoadedModel {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub model: AnyModel,
}

/// Writes the model as a versioned JSON document.
pub fn save_model(
    path: &Path,
    model: &AnyModel,
    provenance: Option<&Provenance>,
) -> Result<(), PersistError> {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        config_hash: provenance.map(|p| p.config_hash.clone()),
        seed: provenance.map(|p| p.seed),
        model: model.clone(),
    };
    let text = serde_json::to_string(&file).map_err(|e| PersistError::Parse(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| PersistError::Io(format!("{}: {e}", path.display())))
}

/// Reads a model written by [`save_model`].
///
/// The version tag is checked before the payload is interpreted, so a future
/// format fails with [`PersistError::UnsupportedVersion`] rather than a
/// confusing parse error; anything structurally wrong (truncation, missing
/// fields, unknown kind) is a [`PersistError::Parse`].
pub fn load_model(path: &Path) -> Result<LoadedModel, PersistError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PersistError::Io(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| PersistError::Parse(e.to_string()))?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| PersistError::Parse("missing format_version".into()))?;
    if found != u64::from(MODEL_FORMAT_VERSION) {
        return Err(PersistError::UnsupportedVersion {
            found,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| PersistError::Parse(e.to_string()))?;
    Ok(LoadedModel {
        config_hash: file.config_hash,
        seed: file.seed,
        model: file.model,
    })
}
