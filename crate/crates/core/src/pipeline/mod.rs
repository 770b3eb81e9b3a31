//! Staged pipeline orchestration: configuration, artifacts, and reporting.
//!
//! Eight sequential stages (`synth → ingest → split → featurize → train →
//! evaluate → explain → report`) each read the previous stage's artifacts and
//! write their own under the configured output directory, together with a
//! manifest recording the config hash and seed. A stage run against missing
//! upstream artifacts fails with [`PipelineError::StageOrder`]; artifacts
//! written under a different configuration fail with
//! [`PipelineError::StaleArtifact`]. All randomness descends from the single
//! config seed through named derivation, so every stage — and every rerun —
//! is independently reproducible, byte for byte.

pub mod persist;

use crate::ensemble::{
    default_passthrough, predict_voted, vote_average, GlobalEntry, ModelRegistry, ModelScope,
    OofAudit, RosterEntry, SegmentedEntry, StackerConfig,
};
use crate::ensemble::{fit_stacker, EnsembleError};
use crate::eval::{
    auc_summary, bootstrap_se_accuracy, confusion, metrics, roc_curve, EvalError, Metrics,
};
use crate::explain::{
    build_shap_report, force_data, gain_importance, impurity_importance, impurity_importance_tree,
    shap_dependence, shap_summary, write_dependence_csv, write_force_json, write_summary_csv,
    write_swarm_csv, ExplainError, ImportanceReport,
};
use crate::features::{
    build_distance_table, derive_distances, derive_training_features_oob, fit_imputation,
    DerivedDistances, FeatureError, FeatureSchema, SchemaOptions,
};
use crate::ingest::{
    parse_shipments_path, write_shipments_csv, IngestConfig, IngestError, IngestReport,
};
use crate::learners::{
    argmax_mode, fit_learner, LearnerError, LearnerModel, LearnerSpec, ProbVector,
};
use crate::model::{CategoryError, CategoryMaps, ModeLabel, ShipmentRecord};
use crate::rng::{derive_seed, rng_for};
use crate::segmented::{matrix, SegmentKey, SegmentedError};
use crate::split::{
    stratified_kfold, stratified_split, FoldAssignment, SplitAssignment, SplitError,
};
use crate::synth::{generate, SynthConfig, SynthError};
use persist::{load_model, save_model, AnyModel, PersistError, Provenance};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// The single human-editable run configuration (TOML on disk).
///
/// `seed` is mandatory: there is no ambient randomness anywhere in the
/// pipeline. Environment variables may override paths and the thread count
/// only (`FREIGHTMODE_OUTPUT_DIR`, `FREIGHTMODE_INPUT_CSV`,
/// `FREIGHTMODE_AREAS_CSV`, `FREIGHTMODE_THREADS`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Rayon thread count; 0 leaves the default.
    #[serde(default)]
    pub threads: usize,
    /// Abort ingest on the first invalid row instead of tallying it.
    #[serde(default)]
    pub strict: bool,
    pub paths: PathsSection,
    /// Present → the pipeline starts from generated data instead of
    /// `paths.input_csv`.
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub stacking: StackingSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub explain: ExplainSection,
    #[serde(default)]
    pub report: ReportSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    /// Shipment CSV in the PUF column layout; unset when `[synth]` drives.
    #[serde(default)]
    pub input_csv: Option<PathBuf>,
    /// Area-type lookup CSV (`area,type`); unset when `[synth]` drives.
    #[serde(default)]
    pub areas_csv: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub test_fraction: f64,
    pub k_folds: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            test_fraction: 0.2,
            k_folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSection {
    /// Include M1..M5/I1..I5 in the train stage's schema.
    pub derived_distance: bool,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection {
            derived_distance: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Learner names fit globally (`dt`, `rf`, `bag`, `extra`, `boost`,
    /// `mnl`, `nb`, `knn`).
    pub global: Vec<String>,
    /// Learner names fit per category, once per segmentation key.
    pub segmented: Vec<String>,
    pub min_segment_samples: usize,
    /// Scaling knobs applied to every spec built from a name; `None` keeps
    /// the learner defaults.
    pub forest_trees: Option<u32>,
    pub boost_rounds: Option<u32>,
    pub tree_depth: Option<u32>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            global: vec!["rf".into()],
            segmented: vec!["rf".into()],
            min_segment_samples: 50,
            forest_trees: None,
            boost_rounds: None,
            tree_depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StackingSection {
    /// `"<learner>:<scope>"` entries, e.g. `"rf:global"`, `"rf:sctg"`.
    /// Empty disables the stack.
    pub roster: Vec<String>,
    /// Meta-feature passthrough column names; unset uses the default set
    /// filtered to the active schema.
    pub passthrough: Option<Vec<String>>,
    pub meta_rounds: u32,
    pub meta_depth: u32,
    pub meta_learning_rate: f64,
    /// Candidate features per meta-tree split; `None` scans all.
    pub meta_feature_subsample: Option<u32>,
}

impl Default for StackingSection {
    fn default() -> Self {
        StackingSection {
            roster: vec![
                "rf:global".into(),
                "extra:global".into(),
                "rf:sctg".into(),
                "rf:naics".into(),
            ],
            passthrough: None,
            meta_rounds: 40,
            meta_depth: 3,
            meta_learning_rate: 0.2,
            meta_feature_subsample: Some(8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub bootstrap: bool,
    pub bootstrap_resamples: u32,
    pub roc: bool,
    /// Learner variant names pooled by the voting row; empty pools every
    /// trained variant.
    pub vote_types: Vec<String>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            bootstrap: true,
            bootstrap_resamples: 1000,
            roc: true,
            vote_types: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainSection {
    /// Test records sampled for SHAP (default 500).
    pub shap_sample: usize,
    /// Name of the trained global model to explain.
    pub model: String,
}

impl Default for ExplainSection {
    fn default() -> Self {
        ExplainSection {
            shap_sample: 500,
            model: "rf".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Learners compared in panels (a)–(f).
    pub learners: Vec<String>,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            learners: vec![
                "mnl".into(),
                "dt".into(),
                "nb".into(),
                "knn".into(),
                "rf".into(),
                "boost".into(),
                "bag".into(),
                "extra".into(),
            ],
        }
    }
}

impl RunConfig {
    /// Parses, applies environment overrides, and validates.
    pub fn load(path: &Path) -> Result<RunConfig, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        config.apply_env_overrides();
        config.validate()?;
        Ok(config)
    }

    fn apply_env_overrides(&mut self) {
        if let Ok(dir) = std::env::var("FREIGHTMODE_OUTPUT_DIR") {
            self.paths.output_dir = PathBuf::from(dir);
        }
        if let Ok(path) = std::env::var("FREIGHTMODE_INPUT_CSV") {
            self.paths.input_csv = Some(PathBuf::from(path));
        }
        if let Ok(path) = std::env::var("FREIGHTMODE_AREAS_CSV") {
            self.paths.areas_csv = Some(PathBuf::from(path));
        }
        if let Ok(n) = std::env::var("FREIGHTMODE_THREADS") {
            if let Ok(n) = n.parse() {
                self.threads = n;
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(PipelineError::Config(format!(
                "split.test_fraction must be in (0,1), got {}",
                self.split.test_fraction
            )));
        }
        if self.split.k_folds < 2 {
            return Err(PipelineError::Config("split.k_folds must be ≥ 2".into()));
        }
        if self.synth.is_none() {
            let input = self.paths.input_csv.as_ref().ok_or_else(|| {
                PipelineError::Config(
                    "either a [synth] section or paths.input_csv is required".into(),
                )
            })?;
            if !input.exists() {
                return Err(PipelineError::Config(format!(
                    "paths.input_csv does not exist: {}",
                    input.display()
                )));
            }
            let areas = self.paths.areas_csv.as_ref().ok_or_else(|| {
                PipelineError::Config(
                    "paths.areas_csv is required when ingesting an external CSV".into(),
                )
            })?;
            if !areas.exists() {
                return Err(PipelineError::Config(format!(
                    "paths.areas_csv does not exist: {}",
                    areas.display()
                )));
            }
        }
        for name in self
            .train
            .global
            .iter()
            .chain(&self.train.segmented)
            .chain(&self.report.learners)
            .chain(std::iter::once(&self.explain.model))
        {
            LearnerSpec::from_name(name)?;
        }
        for entry in &self.stacking.roster {
            parse_roster_entry(entry, &self.train)?;
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, excluding fields that cannot
    /// affect computed values (output directory, thread count), so moving the
    /// output or changing parallelism never invalidates artifacts.
    pub fn config_hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.paths.output_dir = PathBuf::new();
        normalized.threads = 0;
        let json = serde_json::to_string(&normalized).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        format!("{:x}", hasher.finalize())
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.config_hash(),
            seed: self.seed,
        }
    }

    fn schema_options(&self) -> SchemaOptions {
        let options = SchemaOptions::default();
        if self.features.derived_distance {
            options
        } else {
            options.without_derived_distances()
        }
    }

    fn out(&self, relative: &str) -> PathBuf {
        self.paths.output_dir.join(relative)
    }
}

/// Builds a learner spec from a config name with the scaling knobs applied.
pub fn spec_for(name: &str, train: &TrainSection) -> Result<LearnerSpec, LearnerError> {
    let mut spec = LearnerSpec::from_name(name)?;
    match &mut spec {
        LearnerSpec::Forest(p) => {
            if let Some(n) = train.forest_trees {
                p.n_trees = n;
            }
            if train.tree_depth.is_some() {
                p.max_depth = train.tree_depth;
            }
        }
        LearnerSpec::Boosted(p) => {
            if let Some(n) = train.boost_rounds {
                p.n_rounds = n;
            }
            if let Some(d) = train.tree_depth {
                p.max_depth = d;
            }
        }
        LearnerSpec::DecisionTree(p) => {
            if train.tree_depth.is_some() {
                p.max_depth = train.tree_depth;
            }
        }
        _ => {}
    }
    Ok(spec)
}

fn parse_roster_entry(entry: &str, train: &TrainSection) -> Result<RosterEntry, PipelineError> {
    let (name, scope) = entry.split_once(':').ok_or_else(|| {
        PipelineError::Config(format!(
            "roster entry {entry:?} must be \"<learner>:<scope>\" (e.g. \"rf:global\")"
        ))
    })?;
    let spec = spec_for(name, train)?;
    let scope = match scope {
        "global" => ModelScope::Global,
        "sctg" => ModelScope::Sctg,
        "naics" => ModelScope::Naics,
        other => {
            return Err(PipelineError::Config(format!(
                "unknown roster scope {other:?} (expected global, sctg, or naics)"
            )))
        }
    };
    Ok(RosterEntry::new(spec, scope))
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage `{stage}` requires `{missing}` artifacts; run `{missing}` first")]
    StageOrder {
        stage: &'static str,
        missing: &'static str,
    },
    #[error("`{stage}` artifacts were produced by a different configuration (hash {found} vs current {expected}); re-run `{stage}`")]
    StaleArtifact {
        stage: &'static str,
        expected: String,
        found: String,
    },
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Segmented(#[from] SegmentedError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Category(#[from] CategoryError),
}

// ---------------------------------------------------------------------------
// Stages and manifests
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Synth,
    Ingest,
    Split,
    Featurize,
    Train,
    Evaluate,
    Explain,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Split => "split",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Explain => "explain",
            Stage::Report => "report",
        }
    }
}

/// What a completed stage leaves behind besides its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    /// Artifact paths relative to the output directory, in creation order.
    pub outputs: Vec<String>,
}

fn manifest_path(config: &RunConfig, stage: Stage) -> PathBuf {
    config.out(&format!("manifests/{}.json", stage.name()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", parent.display())))?;
    }
    let text = serde_json::to_string(value).map_err(|e| PipelineError::Io(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

fn write_manifest(
    config: &RunConfig,
    stage: Stage,
    outputs: Vec<String>,
) -> Result<StageManifest, PipelineError> {
    let manifest = StageManifest {
        stage: stage.name().to_string(),
        format_version: ARTIFACT_FORMAT_VERSION,
        config_hash: config.config_hash(),
        seed: config.seed,
        outputs,
    };
    write_json(&manifest_path(config, stage), &manifest)?;
    Ok(manifest)
}

/// Loads a prerequisite stage's manifest, failing with [`StageOrder`] when it
/// never ran and [`StaleArtifact`] when it ran under a different config.
///
/// [`StageOrder`]: PipelineError::StageOrder
/// [`StaleArtifact`]: PipelineError::StaleArtifact
pub fn require_stage(
    config: &RunConfig,
    current: Stage,
    needed: Stage,
) -> Result<StageManifest, PipelineError> {
    let path = manifest_path(config, needed);
    if !path.exists() {
        return Err(PipelineError::StageOrder {
            stage: current.name(),
            missing: needed.name(),
        });
    }
    let manifest: StageManifest = read_json(&path)?;
    let expected = config.config_hash();
    if manifest.config_hash != expected {
        return Err(PipelineError::StaleArtifact {
            stage: needed.name(),
            expected,
            found: manifest.config_hash,
        });
    }
    Ok(manifest)
}

fn stage_is_current(config: &RunConfig, stage: Stage) -> bool {
    let path = manifest_path(config, stage);
    if !path.exists() {
        return false;
    }
    matches!(
        read_json::<StageManifest>(&path),
        Ok(m) if m.config_hash == config.config_hash()
    )
}

// ---------------------------------------------------------------------------
// Stage: synth
// ---------------------------------------------------------------------------

/// Summary statistics the generator knows exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub n_records: usize,
    pub expected_shares: [f64; crate::model::NUM_MODES],
    pub bayes_accuracy: f64,
}

pub fn run_synth(config: &RunConfig) -> Result<StageManifest, PipelineError> {
    let synth = config.synth.as_ref().ok_or_else(|| {
        PipelineError::Config("no [synth] section; point paths.input_csv at real data instead".into())
    })?;
    let out = generate(synth, derive_seed(config.seed, "synth", 0))?;
    let dir = config.out("data");
    out.write_all(&dir)?;
    let stats = SynthStats {
        n_records: out.records.len(),
        expected_shares: out.expected_shares,
        bayes_accuracy: out.bayes_accuracy,
    };
    write_json(&dir.join("synth_stats.json"), &stats)?;
    write_manifest(
        config,
        Stage::Synth,
        vec![
            "data/shipments.csv".into(),
            "data/truth.csv".into(),
            "data/areas.csv".into(),
            "data/synth_stats.json".into(),
        ],
    )
}

// ---------------------------------------------------------------------------
// Stage: ingest
// ---------------------------------------------------------------------------

fn areas_csv_path(config: &RunConfig) -> PathBuf {
    config
        .paths
        .areas_csv
        .clone()
        .unwrap_or_else(|| config.out("data/areas.csv"))
}

fn load_maps(config: &RunConfig) -> Result<CategoryMaps, PipelineError> {
    let areas = CategoryMaps::load_area_types_csv(&areas_csv_path(config))?;
    Ok(CategoryMaps::with_default_groups(areas))
}

pub fn run_ingest(config: &RunConfig) -> Result<StageManifest, PipelineError> {
    let input = match &config.paths.input_csv {
        Some(path) => path.clone(),
        None => {
            require_stage(config, Stage::Ingest, Stage::Synth)?;
            config.out("data/shipments.csv")
        }
    };
    let maps = load_maps(config)?;
    let ingest_config = IngestConfig {
        strict: config.strict,
        ..IngestConfig::default()
    };
    let (records, report) = parse_shipments_path(&input, &ingest_config, &maps)?;
    let dir = config.out("ingest");
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
    write_shipments_csv(&dir.join("accepted.csv"), &records, &IngestConfig::default())?;
    write_json(&dir.join("report.json"), &report)?;
    write_manifest(
        config,
        Stage::Ingest,
        vec!["ingest/accepted.csv".into(), "ingest/report.json".into()],
    )
}

/// The parsed ingest-stage tallies, for callers that want them after a run.
pub fn load_ingest_report(config: &RunConfig) -> Result<IngestReport, PipelineError> {
    read_json(&config.out("ingest/report.json"))
}

fn load_accepted(config: &RunConfig) -> Result<(Vec<ShipmentRecord>, CategoryMaps), PipelineError> {
    let maps = load_maps(config)?;
    let (records, _) = parse_shipments_path(
        &config.out("ingest/accepted.csv"),
        &IngestConfig::default(),
        &maps,
    )?;
    Ok((records, maps))
}

// ---------------------------------------------------------------------------
// Stage: split
// ---------------------------------------------------------------------------

pub fn run_split(config: &RunConfig) -> Result<StageManifest, PipelineError> {
    require_stage(config, Stage::Split, Stage::Ingest)?;
    let (records, _maps) = load_accepted(config)?;
    let split = stratified_split(
        &records,
        config.split.test_fraction,
        derive_seed(config.seed, "split", 0),
    )?;
    let train: Vec<ShipmentRecord> = split
        .train_indices()
        .into_iter()
        .map(|i| records[i].clone())
        .collect();
    let folds = stratified_kfold(&train, config.split.k_folds, derive_seed(config.seed, "split", 1))?;
    let dir = config.out("split");
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
    split.write_csv(&dir.join("assignments.csv"))?;
    folds.write_csv(&dir.join("folds.csv"))?;
    write_json(&dir.join("split.json"), &split)?;
    write_json(&dir.join("folds.json"), &folds)?;
    write_manifest(
        config,
        Stage::Split,
        vec![
            "split/assignments.csv".into(),
            "split/folds.csv".into(),
            "split/split.json".into(),
            "split/folds.json".into(),
        ],
    )
}

// ---------------------------------------------------------------------------
// Stage: featurize
// ---------------------------------------------------------------------------

pub fn run_featurize(config: &RunConfig) -> Result<StageManifest, PipelineError> {
    require_stage(config, Stage::Featurize, Stage::Split)?;
    let (records, _maps) = load_accepted(config)?;
    let split: SplitAssignment = read_json(&config.out("split/split.json"))?;
    check_alignment(&records, split.assignments.iter().map(|(id, _)| id), "split")?;
    let folds: FoldAssignment = read_json(&config.out("split/folds.json"))?;

    let train: Vec<ShipmentRecord> = split
        .train_indices()
        .into_iter()
        .map(|i| records[i].clone())
        .collect();
    let test: Vec<ShipmentRecord> = split
        .test_indices()
        .into_iter()
        .map(|i| records[i].clone())
        .collect();
    check_alignment(&train, folds.assignments.iter().map(|(id, _)| id), "folds")?;

    let table = build_distance_table(&train);
    let imputation = fit_imputation(&train);
    let derived_train = derive_training_features_oob(&train, &folds);
    let derived_test: Vec<DerivedDistances> = test
        .iter()
        .map(|r| derive_distances(r, &table, &imputation))
        .collect();
    let schema = FeatureSchema::build(&train, config.schema_options());

    let dir = config.out("features");
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
    table.write_csv(&dir.join("distance_table.csv"))?;
    write_json(&dir.join("imputation.json"), &imputation)?;
    write_json(&dir.join("schema.json"), &schema)?;
    write_json(&dir.join("derived_train.json"), &derived_train)?;
    write_json(&dir.join("derived_test.json"), &derived_test)?;
    write_manifest(
        config,
        Stage::Featurize,
        vec![
            "features/distance_table.csv".into(),
            "features/imputation.json".into(),
            "features/schema.json".into(),
            "features/derived_train.json".into(),
            "features/derived_test.json".into(),
        ],
    )
}

fn check_alignment<'a>(
    records: &[ShipmentRecord],
    ids: impl ExactSizeIterator<Item = &'a String>,
    artifact: &str,
) -> Result<(), PipelineError> {
    if ids.len() != records.len() {
        return Err(PipelineError::Config(format!(
            "{artifact} artifact covers {} records but ingest produced {}",
            ids.len(),
            records.len()
        )));
    }
    for (record, id) in records.iter().zip(ids) {
        if &record.id != id {
            return Err(PipelineError::Config(format!(
                "{artifact} artifact is out of sync with ingest at record {id}"
            )));
        }
    }
    Ok(())
}

/// Everything downstream stages need, loaded from artifacts.
pub struct DataContext {
    pub maps: CategoryMaps,
    pub train: Vec<ShipmentRecord>,
    pub test: Vec<ShipmentRecord>,
    pub folds: FoldAssignment,
    pub derived_train: Vec<DerivedDistances>,
    pub derived_test: Vec<DerivedDistances>,
    /// The train-stage schema (the config's variant).
    pub schema: FeatureSchema,
}

fn load_context(config: &RunConfig) -> Result<DataContext, PipelineError> {
    let (records, maps) = load_accepted(config)?;
    let split: SplitAssignment = read_json(&config.out("split/split.json"))?;
    check_alignment(&records, split.assignments.iter().map(|(id, _)| id), "split")?;
    let folds: FoldAssignment = read_json(&config.out("split/folds.json"))?;
    let train: Vec<ShipmentRecord> = split
        .train_indices()
        .into_iter()
        .map(|i| records[i].clone())
        .collect();
    let test: Vec<ShipmentRecord> = split
        .test_indices()
        .into_iter()
        .map(|i| records[i].clone())
        .collect();
    let derived_train: Vec<DerivedDistances> = read_json(&config.out("features/derived_train.json"))?;
    let derived_test: Vec<DerivedDistances> = read_json(&config.out("features/derived_test.json"))?;
    if derived_train.len() != train.len() || derived_test.len() != test.len() {
        return Err(PipelineError::Config(
            "derived-distance artifacts are out of sync with the split; re-run featurize".into(),
        ));
    }
    let schema: FeatureSchema = read_json(&config.out("features/schema.json"))?;
    Ok(DataContext {
        maps,
        train,
        test,
        folds,
        derived_train,
        derived_test,
        schema,
    })
}

// ---------------------------------------------------------------------------
// Stage: train
// ---------------------------------------------------------------------------

fn stacker_config(
    config: &RunConfig,
    options: SchemaOptions,
    schema: &FeatureSchema,
    k: usize,
) -> Result<StackerConfig, PipelineError> {
    let roster = config
        .stacking
        .roster
        .iter()
        .map(|entry| parse_roster_entry(entry, &config.train))
        .collect::<Result<Vec<_>, _>>()?;
    let passthrough = match &config.stacking.passthrough {
        Some(names) => names.clone(),
        None => default_passthrough()
            .into_iter()
            .filter(|name| schema.position(name).is_some())
            .collect(),
    };
    let meta = crate::learners::BoostedParams {
        n_rounds: config.stacking.meta_rounds,
        learning_rate: config.stacking.meta_learning_rate,
        max_depth: config.stacking.meta_depth,
        feature_subsample: config.stacking.meta_feature_subsample,
        ..crate::learners::BoostedParams::default()
    };
    Ok(StackerConfig {
        roster,
        passthrough,
        k,
        meta,
        min_samples: config.train.min_segment_samples,
        schema_options: options,
    })
}

pub fn run_train(config: &RunConfig) -> Result<StageManifest, PipelineError> {
    require_stage(config, Stage::Train, Stage::Featurize)?;
    let ctx = load_context(config)?;
    let labels: Vec<ModeLabel> = ctx.train.iter().map(|r| r.mode).collect();
    let x_train = matrix(&ctx.train, &ctx.derived_train, &ctx.schema, &ctx.maps)?;
    let provenance = config.provenance();
    let models_dir = config.out("models");
    std::fs::create_dir_all(&models_dir)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", models_dir.display())))?;
    let mut outputs = Vec::new();
    let mut fitted_global: BTreeMap<String, LearnerModel> = BTreeMap::new();

    for name in &config.train.global {
        let spec = spec_for(name, &config.train)?;
        let seed = derive_seed(config.seed, &format!("train:{name}:global"), 0);
        let model = fit_learner(&spec, &x_train, &labels, seed)?;
        fitted_global.insert(name.clone(), model.clone());
        let artifact = AnyModel::Global(GlobalEntry {
            name: name.clone(),
            model,
            schema: ctx.schema.clone(),
        });
        let relative = format!("models/{name}-global.model.json");
        save_model(&config.out(&relative), &artifact, Some(&provenance))?;
        outputs.push(relative);
    }

    for name in &config.train.segmented {
        let spec = spec_for(name, &config.train)?;
        for key in [SegmentKey::Sctg, SegmentKey::Naics] {
            let donated = fitted_global
                .get(name)
                .map(|model| (model.clone(), ctx.schema.clone()));
            let seed = derive_seed(config.seed, &format!("train:{name}:{}", key.token()), 0);
            let model = crate::segmented::fit_segmented(
                &ctx.train,
                &ctx.derived_train,
                &ctx.maps,
                key,
                &spec,
                config.train.min_segment_samples,
                config.schema_options(),
                seed,
                donated,
            )?;
            let artifact = AnyModel::Segmented(SegmentedEntry {
                name: name.clone(),
                model,
            });
            let relative = format!("models/{name}-{}.model.json", key.token());
            save_model(&config.out(&relative), &artifact, Some(&provenance))?;
            outputs.push(relative);
        }
    }

    if !config.stacking.roster.is_empty() {
        let stack_config = stacker_config(config, config.schema_options(), &ctx.schema, ctx.folds.k)?;
        let (stack, audit) = fit_stacker(
            &ctx.train,
            &ctx.derived_train,
            &ctx.maps,
            &stack_config,
            &ctx.folds,
            derive_seed(config.seed, "stack", 0),
        )?;
        let artifact = AnyModel::Stacked {
            name: "stack".into(),
            stack,
        };
        save_model(&config.out("models/stack.model.json"), &artifact, Some(&provenance))?;
        outputs.push("models/stack.model.json".into());
        write_json(&config.out("models/oof_audit.json"), &audit)?;
        outputs.push("models/oof_audit.json".into());
    }

    write_manifest(config, Stage::Train, outputs)
}

/// The out-of-fold leakage audit from the train stage, if a stack was fit.
pub fn load_oof_audit(config: &RunConfig) -> Result<OofAudit, PipelineError> {
    read_json(&config.out("models/oof_audit.json"))
}

// ---------------------------------------------------------------------------
// Stage: evaluate
// ---------------------------------------------------------------------------

/// One evaluated model's test-set results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub metrics: Metrics,
    pub bootstrap_se_accuracy: Option<f64>,
    pub auc_per_mode: BTreeMap<String, Option<f64>>,
    pub auc_macro: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub n_test: usize,
    pub rows: Vec<MetricsRow>,
}

fn batch_probabilities(
    model: &AnyModel,
    records: &[ShipmentRecord],
    derived: &[DerivedDistances],
    maps: &CategoryMaps,
) -> Result<Vec<ProbVector>, PipelineError> {
    records
        .par_iter()
        .zip(derived)
        .map(|(r, d)| model.predict_proba(r, d, maps).map_err(PipelineError::from))
        .collect()
}

fn metrics_row(
    config: &RunConfig,
    name: &str,
    probabilities: &[ProbVector],
    truths: &[ModeLabel],
    roc_dir: Option<&Path>,
) -> Result<MetricsRow, PipelineError> {
    let predictions: Vec<ModeLabel> = probabilities.iter().map(|p| argmax_mode(p)).collect();
    let cm = confusion(&predictions, truths)?;
    let m = metrics(&cm)?;
    let bootstrap = if config.evaluation.bootstrap {
        Some(bootstrap_se_accuracy(
            &predictions,
            truths,
            config.evaluation.bootstrap_resamples,
            derive_seed(config.seed, &format!("evaluate:{name}"), 0),
        )?)
    } else {
        None
    };
    let (per_mode, auc_macro) = auc_summary(probabilities, truths);
    if let Some(dir) = roc_dir {
        for mode in ModeLabel::ALL {
            if let Ok(curve) = roc_curve(probabilities, truths, mode) {
                curve.write_csv(&dir.join(format!("{name}-mode{}.csv", mode.ordinal())))?;
            }
        }
    }
    Ok(MetricsRow {
        model: name.to_string(),
        metrics: m,
        bootstrap_se_accuracy: bootstrap,
        auc_per_mode: per_mode
            .into_iter()
            .map(|(mode, auc)| (mode.name().to_string(), auc))
            .collect(),
        auc_macro,
    })
}

pub fn run_evaluate(config: &RunConfig) -> Result<StageManifest, PipelineError> {
    let train_manifest = require_stage(config, Stage::Evaluate, Stage::Train)?;
    let ctx = load_context(config)?;
    let truths: Vec<ModeLabel> = ctx.test.iter().map(|r| r.mode).collect();
    let mut outputs = Vec::new();
    let roc_dir = if config.evaluation.roc {
        let dir = config.out("evaluate/roc");
        std::fs::create_dir_all(&dir)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
        Some(dir)
    } else {
        std::fs::create_dir_all(config.out("evaluate"))
            .map_err(|e| PipelineError::Io(e.to_string()))?;
        None
    };

    let mut registry = ModelRegistry::default();
    let mut rows = Vec::new();
    for relative in &train_manifest.outputs {
        if !relative.ends_with(".model.json") {
            continue;
        }
        let loaded = load_model(&config.out(relative))?;
        let row_name = match &loaded.model {
            AnyModel::Global(e) => format!("{}-global", e.name),
            AnyModel::Segmented(e) => format!("{}-{}", e.name, e.model.key.token()),
            AnyModel::Stacked { name, .. } => name.clone(),
        };
        let probabilities =
            batch_probabilities(&loaded.model, &ctx.test, &ctx.derived_test, &ctx.maps)?;
        rows.push(metrics_row(
            config,
            &row_name,
            &probabilities,
            &truths,
            roc_dir.as_deref(),
        )?);
        match loaded.model {
            AnyModel::Global(e) => registry.global.push(e),
            AnyModel::Segmented(e) => match e.model.key {
                SegmentKey::Sctg => registry.sctg.push(e),
                SegmentKey::Naics => registry.naics.push(e),
            },
            AnyModel::Stacked { .. } => {}
        }
    }

    // Voting row over the requested (or all) trained variants.
    let mut vote_types: Vec<String> = if config.evaluation.vote_types.is_empty() {
        let mut names: Vec<String> = registry
            .global
            .iter()
            .map(|e| e.name.clone())
            .chain(registry.sctg.iter().map(|e| e.name.clone()))
            .chain(registry.naics.iter().map(|e| e.name.clone()))
            .collect();
        names.sort();
        names.dedup();
        names
    } else {
        config.evaluation.vote_types.clone()
    };
    vote_types.retain(|name| {
        registry.global.iter().any(|e| &e.name == name)
            || registry.sctg.iter().any(|e| &e.name == name)
            || registry.naics.iter().any(|e| &e.name == name)
    });
    if !vote_types.is_empty() {
        let types: Vec<&str> = vote_types.iter().map(String::as_str).collect();
        let probabilities: Result<Vec<ProbVector>, PipelineError> = ctx
            .test
            .par_iter()
            .zip(&ctx.derived_test)
            .map(|(r, d)| {
                predict_voted(&registry, &types, r, d, &ctx.maps)
                    .map(|(p, _)| p)
                    .map_err(PipelineError::from)
            })
            .collect();
        rows.push(metrics_row(
            config,
            "vote",
            &probabilities?,
            &truths,
            roc_dir.as_deref(),
        )?);
    }

    let document = MetricsDocument {
        format_version: ARTIFACT_FORMAT_VERSION,
        config_hash: config.config_hash(),
        seed: config.seed,
        n_test: ctx.test.len(),
        rows,
    };
    write_json(&config.out("evaluate/metrics.json"), &document)?;
    outputs.push("evaluate/metrics.json".into());
    if let Some(dir) = &roc_dir {
        let mut names: Vec<String> = std::fs::read_dir(dir)
            .map_err(|e| PipelineError::Io(e.to_string()))?
            .filter_map(|entry| entry.ok())
            .map(|entry| format!("evaluate/roc/{}", entry.file_name().to_string_lossy()))
            .collect();
        names.sort();
        outputs.extend(names);
    }
    write_manifest(config, Stage::Evaluate, outputs)
}

/// The evaluate stage's output, for callers that want it after a run.
pub fn load_metrics(config: &RunConfig) -> Result<MetricsDocument, PipelineError> {
    read_json(&config.out("evaluate/metrics.json"))
}

// ---------------------------------------------------------------------------
// Stage: explain
// ---------------------------------------------------------------------------

pub fn run_explain(config: &RunConfig) -> Result<StageManifest, PipelineError> {
    let train_manifest = require_stage(config, Stage::Explain, Stage::Train)?;
    let ctx = load_context(config)?;
    let wanted = format!("models/{}-global.model.json", config.explain.model);
    if !train_manifest.outputs.contains(&wanted) {
        return Err(PipelineError::Config(format!(
            "explain.model {:?} was not trained as a global model",
            config.explain.model
        )));
    }
    let loaded = load_model(&config.out(&wanted))?;
    let (model, schema) = match loaded.model {
        AnyModel::Global(e) => (e.model, e.schema),
        _ => unreachable!("-global artifacts are always global models"),
    };

    // Deterministic sample of test records.
    let n = config.explain.shap_sample.min(ctx.test.len());
    let mut indices: Vec<usize> = if n == ctx.test.len() {
        (0..n).collect()
    } else {
        let mut rng = rng_for(config.seed, "explain", 0);
        rand::seq::index::sample(&mut rng, ctx.test.len(), n).into_vec()
    };
    indices.sort_unstable();
    let sample: Vec<ShipmentRecord> = indices.iter().map(|&i| ctx.test[i].clone()).collect();
    let derived: Vec<DerivedDistances> = indices.iter().map(|&i| ctx.derived_test[i]).collect();
    let x = matrix(&sample, &derived, &schema, &ctx.maps)?;
    let ids: Vec<String> = sample.iter().map(|r| r.id.clone()).collect();
    let names: Vec<String> = schema.feature_names().iter().map(|s| s.to_string()).collect();

    let report = build_shap_report(&model, &x, &ids, &names)?;
    let dir = config.out("explain");
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
    let mut outputs = Vec::new();

    write_summary_csv(&report, &dir.join("shap_summary.csv"))?;
    outputs.push("explain/shap_summary.csv".into());
    write_swarm_csv(&report, &x, &dir.join("shap_swarm.csv"))?;
    outputs.push("explain/shap_swarm.csv".into());

    let importance: ImportanceReport = match &model {
        LearnerModel::Forest(f) => impurity_importance(f, &names)?,
        LearnerModel::DecisionTree(t) => impurity_importance_tree(t, &names)?,
        LearnerModel::Boosted(b) => gain_importance(b, &names)?,
        _ => unreachable!("build_shap_report rejects non-tree models"),
    };
    importance.write_csv(&dir.join("importance.csv"))?;
    outputs.push("explain/importance.csv".into());

    // Dependence plot for the two strongest features, φ of the largest class.
    let summary = shap_summary(&report);
    if let Some(top) = summary.first() {
        let second = summary
            .iter()
            .map(|row| row.feature.clone())
            .find(|f| f != &top.feature)
            .unwrap_or_else(|| top.feature.clone());
        let class = ModeLabel::ForHireTruck.index();
        let points = shap_dependence(&report, &x, &top.feature, &second, class)?;
        write_dependence_csv(&points, &dir.join("dependence.csv"))?;
        outputs.push("explain/dependence.csv".into());
    }

    for i in 0..report.ids.len().min(3) {
        let force = force_data(&report, &x, i)?;
        let relative = format!("explain/force_{i}.json");
        write_force_json(&force, &config.out(&relative))?;
        outputs.push(relative);
    }

    write_manifest(config, Stage::Explain, outputs)
}

// ---------------------------------------------------------------------------
// Stage: report
// ---------------------------------------------------------------------------

/// The seven comparison panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::A,
        Scenario::B,
        Scenario::C,
        Scenario::D,
        Scenario::E,
        Scenario::F,
        Scenario::G,
    ];

    pub fn letter(self) -> char {
        match self {
            Scenario::A => 'a',
            Scenario::B => 'b',
            Scenario::C => 'c',
            Scenario::D => 'd',
            Scenario::E => 'e',
            Scenario::F => 'f',
            Scenario::G => 'g',
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Scenario::A => "Unified models (without derived distance)",
            Scenario::B => "Unified models (with derived distance)",
            Scenario::C => "Local models by industry code (without derived distance)",
            Scenario::D => "Local models by industry code (with derived distance)",
            Scenario::E => "Local models by commodity code (without derived distance)",
            Scenario::F => "Local models by commodity code (with derived distance)",
            Scenario::G => "Ensemble models over the stacking roster",
        }
    }

    /// Parses `"a"`, `"a,c,g"`, or `"all"`.
    pub fn parse_list(text: &str) -> Result<Vec<Scenario>, PipelineError> {
        if text.eq_ignore_ascii_case("all") {
            return Ok(Scenario::ALL.to_vec());
        }
        let mut out = Vec::new();
        for part in text.split(',') {
            let scenario = match part.trim().to_ascii_lowercase().as_str() {
                "a" => Scenario::A,
                "b" => Scenario::B,
                "c" => Scenario::C,
                "d" => Scenario::D,
                "e" => Scenario::E,
                "f" => Scenario::F,
                "g" => Scenario::G,
                other => {
                    return Err(PipelineError::Config(format!(
                        "unknown scenario {other:?} (expected a–g or \"all\")"
                    )))
                }
            };
            if !out.contains(&scenario) {
                out.push(scenario);
            }
        }
        if out.is_empty() {
            return Err(PipelineError::Config("no scenarios requested".into()));
        }
        out.sort();
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPanel {
    pub letter: char,
    pub title: String,
    pub rows: Vec<ReportRow>,
}

impl ReportPanel {
    pub fn best_accuracy(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.metrics.accuracy)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn row(&self, model: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model)
    }
}

/// One countermeasure-effect line: best accuracy of the treated panels minus
/// best of the control panels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub countermeasure: String,
    pub comparison: String,
    pub delta_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Known only for generated data.
    pub bayes_accuracy: Option<f64>,
    pub panels: Vec<ReportPanel>,
    pub ablation: Vec<AblationRow>,
}

impl ReportDocument {
    pub fn panel(&self, letter: char) -> Option<&ReportPanel> {
        self.panels.iter().find(|p| p.letter == letter)
    }
}

/// Runs any data-producing stage that has not yet run under this config, so
/// a single `report` invocation works on a fresh output directory.
pub fn ensure_data_stages(config: &RunConfig) -> Result<(), PipelineError> {
    if config.synth.is_some() && !stage_is_current(config, Stage::Synth) {
        run_synth(config)?;
    }
    if !stage_is_current(config, Stage::Ingest) {
        run_ingest(config)?;
    }
    if !stage_is_current(config, Stage::Split) {
        run_split(config)?;
    }
    if !stage_is_current(config, Stage::Featurize) {
        run_featurize(config)?;
    }
    Ok(())
}

struct PanelContext {
    ctx: DataContext,
    schema_with: FeatureSchema,
    schema_without: FeatureSchema,
    x_train_with: Vec<Vec<f64>>,
    x_train_without: Vec<Vec<f64>>,
    x_test_with: Vec<Vec<f64>>,
    x_test_without: Vec<Vec<f64>>,
    labels: Vec<ModeLabel>,
    truths: Vec<ModeLabel>,
}

impl PanelContext {
    fn schema(&self, with_derived: bool) -> &FeatureSchema {
        if with_derived {
            &self.schema_with
        } else {
            &self.schema_without
        }
    }

    fn x_train(&self, with_derived: bool) -> &[Vec<f64>] {
        if with_derived {
            &self.x_train_with
        } else {
            &self.x_train_without
        }
    }

    fn x_test(&self, with_derived: bool) -> &[Vec<f64>] {
        if with_derived {
            &self.x_test_with
        } else {
            &self.x_test_without
        }
    }

    fn options(with_derived: bool) -> SchemaOptions {
        if with_derived {
            SchemaOptions::default()
        } else {
            SchemaOptions::default().without_derived_distances()
        }
    }
}

fn report_row(
    name: &str,
    probabilities: &[ProbVector],
    truths: &[ModeLabel],
) -> Result<(ReportRow, Vec<ProbVector>), PipelineError> {
    let predictions: Vec<ModeLabel> = probabilities.iter().map(|p| argmax_mode(p)).collect();
    let cm = confusion(&predictions, truths)?;
    Ok((
        ReportRow {
            model: name.to_string(),
            metrics: metrics(&cm)?,
        },
        probabilities.to_vec(),
    ))
}

/// Panels (a)/(b): one global model per learner plus a voting row.
fn unified_panel(
    config: &RunConfig,
    panel_ctx: &PanelContext,
    scenario: Scenario,
    with_derived: bool,
    global_cache: &mut BTreeMap<(bool, String), LearnerModel>,
) -> Result<ReportPanel, PipelineError> {
    let mut rows = Vec::new();
    let mut prob_sets: Vec<Vec<ProbVector>> = Vec::new();
    for name in &config.report.learners {
        let spec = spec_for(name, &config.train)?;
        let seed = derive_seed(
            config.seed,
            &format!("report:{}:{name}", scenario.letter()),
            0,
        );
        let model = fit_learner(&spec, panel_ctx.x_train(with_derived), &panel_ctx.labels, seed)?;
        let probabilities: Result<Vec<ProbVector>, LearnerError> = panel_ctx
            .x_test(with_derived)
            .par_iter()
            .map(|x| model.predict_proba(x))
            .collect();
        let probabilities = probabilities?;
        global_cache.insert((with_derived, name.clone()), model);
        let (row, probs) = report_row(name, &probabilities, &panel_ctx.truths)?;
        rows.push(row);
        prob_sets.push(probs);
    }
    push_vote_row(&mut rows, &prob_sets, &panel_ctx.truths)?;
    Ok(ReportPanel {
        letter: scenario.letter(),
        title: scenario.title().to_string(),
        rows,
    })
}

/// Panels (c)–(f): one segmented model per learner plus a voting row.
fn local_panel(
    config: &RunConfig,
    panel_ctx: &PanelContext,
    scenario: Scenario,
    key: SegmentKey,
    with_derived: bool,
    global_cache: &BTreeMap<(bool, String), LearnerModel>,
) -> Result<ReportPanel, PipelineError> {
    let mut rows = Vec::new();
    let mut prob_sets: Vec<Vec<ProbVector>> = Vec::new();
    for name in &config.report.learners {
        let spec = spec_for(name, &config.train)?;
        let seed = derive_seed(
            config.seed,
            &format!("report:{}:{name}", scenario.letter()),
            0,
        );
        let donated = global_cache
            .get(&(with_derived, name.clone()))
            .map(|model| (model.clone(), panel_ctx.schema(with_derived).clone()));
        let model = crate::segmented::fit_segmented(
            &panel_ctx.ctx.train,
            &panel_ctx.ctx.derived_train,
            &panel_ctx.ctx.maps,
            key,
            &spec,
            config.train.min_segment_samples,
            PanelContext::options(with_derived),
            seed,
            donated,
        )?;
        let probabilities: Result<Vec<ProbVector>, SegmentedError> = panel_ctx
            .ctx
            .test
            .par_iter()
            .zip(&panel_ctx.ctx.derived_test)
            .map(|(r, d)| crate::segmented::predict_segmented(&model, r, d, &panel_ctx.ctx.maps))
            .collect();
        let (row, probs) = report_row(name, &probabilities?, &panel_ctx.truths)?;
        rows.push(row);
        prob_sets.push(probs);
    }
    push_vote_row(&mut rows, &prob_sets, &panel_ctx.truths)?;
    Ok(ReportPanel {
        letter: scenario.letter(),
        title: scenario.title().to_string(),
        rows,
    })
}

fn push_vote_row(
    rows: &mut Vec<ReportRow>,
    prob_sets: &[Vec<ProbVector>],
    truths: &[ModeLabel],
) -> Result<(), PipelineError> {
    if prob_sets.is_empty() {
        return Ok(());
    }
    let n = prob_sets[0].len();
    let voted: Vec<ProbVector> = (0..n)
        .map(|i| {
            let outputs: Vec<ProbVector> = prob_sets.iter().map(|set| set[i]).collect();
            vote_average(&outputs)
        })
        .collect();
    let (row, _) = report_row("vote", &voted, truths)?;
    rows.push(row);
    Ok(())
}

/// Panel (g): the stacking roster's families, their vote, and the stack —
/// once per schema variant.
fn ensemble_panel(
    config: &RunConfig,
    panel_ctx: &PanelContext,
) -> Result<ReportPanel, PipelineError> {
    let mut rows = Vec::new();
    for (with_derived, label) in [(false, "without derived"), (true, "with derived")] {
        let options = PanelContext::options(with_derived);
        let stack_config = stacker_config(config, options, panel_ctx.schema(with_derived), panel_ctx.ctx.folds.k)?;
        let seed = derive_seed(config.seed, &format!("report:g:{label}"), 0);
        let (stack, _audit) = fit_stacker(
            &panel_ctx.ctx.train,
            &panel_ctx.ctx.derived_train,
            &panel_ctx.ctx.maps,
            &stack_config,
            &panel_ctx.ctx.folds,
            seed,
        )?;

        // Family rows from the deployment members.
        let mut member_probs: Vec<Vec<ProbVector>> = Vec::new();
        for member in &stack.members {
            let probabilities: Result<Vec<ProbVector>, PipelineError> = panel_ctx
                .ctx
                .test
                .par_iter()
                .zip(&panel_ctx.ctx.derived_test)
                .map(|(r, d)| {
                    member
                        .predict(r, d, &stack.global_schema, &panel_ctx.ctx.maps)
                        .map_err(PipelineError::from)
                })
                .collect();
            let probabilities = probabilities?;
            let (row, probs) = report_row(
                &format!("{} [{label}]", member.tag),
                &probabilities,
                &panel_ctx.truths,
            )?;
            rows.push(row);
            member_probs.push(probs);
        }

        let n = panel_ctx.ctx.test.len();
        let voted: Vec<ProbVector> = (0..n)
            .map(|i| {
                let outputs: Vec<ProbVector> = member_probs.iter().map(|set| set[i]).collect();
                vote_average(&outputs)
            })
            .collect();
        let (vote_row, _) = report_row(&format!("vote [{label}]"), &voted, &panel_ctx.truths)?;
        rows.push(vote_row);

        let stacked: Result<Vec<ProbVector>, EnsembleError> = panel_ctx
            .ctx
            .test
            .par_iter()
            .zip(&panel_ctx.ctx.derived_test)
            .map(|(r, d)| crate::ensemble::predict_stacked(&stack, r, d, &panel_ctx.ctx.maps))
            .collect();
        let (stack_row, _) = report_row(&format!("stack [{label}]"), &stacked?, &panel_ctx.truths)?;
        rows.push(stack_row);
    }
    Ok(ReportPanel {
        letter: 'g',
        title: Scenario::G.title().to_string(),
        rows,
    })
}

fn best_of(panels: &[&ReportPanel]) -> f64 {
    panels
        .iter()
        .map(|p| p.best_accuracy())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn ablation_rows(document: &ReportDocument) -> Vec<AblationRow> {
    let mut out = Vec::new();
    let panel = |letter: char| document.panel(letter);
    let mut push_delta = |countermeasure: &str, comparison: &str, treated: Vec<char>, control: Vec<char>| {
        let treated: Vec<&ReportPanel> = treated.iter().filter_map(|&l| panel(l)).collect();
        let control: Vec<&ReportPanel> = control.iter().filter_map(|&l| panel(l)).collect();
        if treated.is_empty() || control.is_empty() {
            return;
        }
        out.push(AblationRow {
            countermeasure: countermeasure.to_string(),
            comparison: comparison.to_string(),
            delta_accuracy: best_of(&treated) - best_of(&control),
        });
    };
    push_delta(
        "derived distance (unified)",
        "best(b) - best(a)",
        vec!['b'],
        vec!['a'],
    );
    push_delta(
        "derived distance (NAICS-local)",
        "best(d) - best(c)",
        vec!['d'],
        vec!['c'],
    );
    push_delta(
        "derived distance (SCTG-local)",
        "best(f) - best(e)",
        vec!['f'],
        vec!['e'],
    );
    push_delta(
        "local models",
        "best(c,d,e,f) - best(a,b)",
        vec!['c', 'd', 'e', 'f'],
        vec!['a', 'b'],
    );
    push_delta(
        "ensemble",
        "best(g) - best(a..f)",
        vec!['g'],
        vec!['a', 'b', 'c', 'd', 'e', 'f'],
    );
    out
}

/// Computes the comparison panels and writes `report/report.json`.
///
/// Missing data stages (synth through featurize) are run first, so this is a
/// one-invocation entry point on a fresh output directory.
pub fn run_report(
    config: &RunConfig,
    scenarios: &[Scenario],
) -> Result<ReportDocument, PipelineError> {
    ensure_data_stages(config)?;
    let ctx = load_context(config)?;
    let labels: Vec<ModeLabel> = ctx.train.iter().map(|r| r.mode).collect();
    let truths: Vec<ModeLabel> = ctx.test.iter().map(|r| r.mode).collect();
    let schema_with = FeatureSchema::build(&ctx.train, SchemaOptions::default());
    let schema_without =
        FeatureSchema::build(&ctx.train, SchemaOptions::default().without_derived_distances());
    let x_train_with = matrix(&ctx.train, &ctx.derived_train, &schema_with, &ctx.maps)?;
    let x_train_without = matrix(&ctx.train, &ctx.derived_train, &schema_without, &ctx.maps)?;
    let x_test_with = matrix(&ctx.test, &ctx.derived_test, &schema_with, &ctx.maps)?;
    let x_test_without = matrix(&ctx.test, &ctx.derived_test, &schema_without, &ctx.maps)?;
    let panel_ctx = PanelContext {
        ctx,
        schema_with,
        schema_without,
        x_train_with,
        x_train_without,
        x_test_with,
        x_test_without,
        labels,
        truths,
    };

    let mut global_cache: BTreeMap<(bool, String), LearnerModel> = BTreeMap::new();
    let mut panels = Vec::new();
    for &scenario in scenarios {
        let panel = match scenario {
            Scenario::A => unified_panel(config, &panel_ctx, scenario, false, &mut global_cache)?,
            Scenario::B => unified_panel(config, &panel_ctx, scenario, true, &mut global_cache)?,
            Scenario::C => {
                local_panel(config, &panel_ctx, scenario, SegmentKey::Naics, false, &global_cache)?
            }
            Scenario::D => {
                local_panel(config, &panel_ctx, scenario, SegmentKey::Naics, true, &global_cache)?
            }
            Scenario::E => {
                local_panel(config, &panel_ctx, scenario, SegmentKey::Sctg, false, &global_cache)?
            }
            Scenario::F => {
                local_panel(config, &panel_ctx, scenario, SegmentKey::Sctg, true, &global_cache)?
            }
            Scenario::G => ensemble_panel(config, &panel_ctx)?,
        };
        panels.push(panel);
    }

    let bayes_accuracy = read_json::<SynthStats>(&config.out("data/synth_stats.json"))
        .ok()
        .map(|s| s.bayes_accuracy);
    let mut document = ReportDocument {
        format_version: ARTIFACT_FORMAT_VERSION,
        config_hash: config.config_hash(),
        seed: config.seed,
        n_train: panel_ctx.ctx.train.len(),
        n_test: panel_ctx.ctx.test.len(),
        bayes_accuracy,
        panels,
        ablation: Vec::new(),
    };
    document.ablation = ablation_rows(&document);
    write_json(&config.out("report/report.json"), &document)?;
    write_manifest(config, Stage::Report, vec!["report/report.json".into()])?;
    Ok(document)
}

/// The report stage's output, for callers that want it after a run.
pub fn load_report(config: &RunConfig) -> Result<ReportDocument, PipelineError> {
    read_json(&config.out("report/report.json"))
}

// ---------------------------------------------------------------------------
// Whole-pipeline convenience
// ---------------------------------------------------------------------------

/// Runs every stage in order. Synth is skipped when external data is
/// configured; explain failures on non-tree models are surfaced, not skipped.
pub fn run_all(config: &RunConfig, scenarios: &[Scenario]) -> Result<ReportDocument, PipelineError> {
    ensure_data_stages(config)?;
    run_train(config)?;
    run_evaluate(config)?;
    run_explain(config)?;
    run_report(config, scenarios)
}
