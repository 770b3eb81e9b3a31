//! Level-2 combination of fitted models: dynamic probability voting over a
//! per-record model pool, and two-level stacking where a boosted meta-learner
//! consumes out-of-fold level-1 probabilities plus passthrough features.
//!
//! Voting collects, for one record, every requested learner variant in each
//! scope (the record's SCTG-local model, its NAICS-local model, and the
//! global model) and averages their probability vectors. Stacking fixes a
//! roster of (learner, scope) families, builds leakage-free meta-features by
//! refitting every family per fold and predicting only the held-out fold,
//! then trains the meta-learner on those; the deployment roster is refit on
//! all training rows.

use crate::features::{
    assemble_features, DerivedDistances, FeatureError, FeatureSchema, SchemaOptions,
};
use crate::learners::{
    argmax_mode, fit_learner, BoostedModel, BoostedParams, ForestParams, ForestVariant,
    LearnerError, LearnerModel, LearnerSpec, ProbVector,
};
use crate::model::{CategoryMaps, ModeLabel, ShipmentRecord, NUM_MODES};
use crate::rng::derive_seed;
use crate::segmented::{fit_segmented, matrix, predict_segmented, SegmentKey, SegmentedError, SegmentedModel};
use crate::split::{FoldAssignment, SplitError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("no models in the pool match the requested types")]
    NoModelsAvailable,
    #[error("passthrough feature {0:?} is not in the feature schema")]
    UnknownPassthrough(String),
    #[error("stacked model layout mismatch: expected [{expected}], got [{got}]")]
    SchemaMismatch { expected: String, got: String },
    #[error("fold assignment covers {folds} records but {records} were given")]
    FoldMismatch { folds: usize, records: usize },
    #[error("records and derived distances differ in length: {records} vs {derived}")]
    LengthMismatch { records: usize, derived: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Segmented(#[from] SegmentedError),
    #[error(transparent)]
    Split(#[from] SplitError),
}

/// Where a model's training rows came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelScope {
    Global,
    Sctg,
    Naics,
}

impl ModelScope {
    pub fn token(self) -> &'static str {
        match self {
            ModelScope::Global => "global",
            ModelScope::Sctg => "sctg",
            ModelScope::Naics => "naics",
        }
    }
}

/// Fitted models available for voting, grouped by scope and keyed by a
/// learner variant tag (e.g. `"rf"`, `"bag"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelRegistry {
    pub global: Vec<GlobalEntry>,
    pub sctg: Vec<SegmentedEntry>,
    pub naics: Vec<SegmentedEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalEntry {
    pub name: String,
    pub model: LearnerModel,
    pub schema: FeatureSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedEntry {
    pub name: String,
    pub model: SegmentedModel,
}

/// One predictor resolved for a specific record.
#[derive(Debug, Clone, Copy)]
pub struct PoolMember<'a> {
    pub source: ModelScope,
    pub name: &'a str,
    pub model: &'a LearnerModel,
    pub schema: &'a FeatureSchema,
}

/// Resolves the voting pool for one record: SCTG-local ∪ NAICS-local ∪
/// global, restricted to the requested learner variant tags.
pub fn collect_models_for_record<'a>(
    record: &ShipmentRecord,
    model_types: &[&str],
    registry: &'a ModelRegistry,
) -> Result<Vec<PoolMember<'a>>, EnsembleError> {
    let wanted = |name: &str| model_types.iter().any(|t| *t == name);
    let mut pool = Vec::new();
    for entry in &registry.sctg {
        if wanted(&entry.name) {
            let (model, schema) = entry.model.resolve(record);
            pool.push(PoolMember {
                source: ModelScope::Sctg,
                name: &entry.name,
                model,
                schema,
            });
        }
    }
    for entry in &registry.naics {
        if wanted(&entry.name) {
            let (model, schema) = entry.model.resolve(record);
            pool.push(PoolMember {
                source: ModelScope::Naics,
                name: &entry.name,
                model,
                schema,
            });
        }
    }
    for entry in &registry.global {
        if wanted(&entry.name) {
            pool.push(PoolMember {
                source: ModelScope::Global,
                name: &entry.name,
                model: &entry.model,
                schema: &entry.schema,
            });
        }
    }
    if pool.is_empty() {
        return Err(EnsembleError::NoModelsAvailable);
    }
    Ok(pool)
}

/// Unweighted arithmetic mean of probability vectors.
///
/// The hard label is the argmax, ties resolved to the lowest class index.
pub fn vote_average(outputs: &[ProbVector]) -> ProbVector {
    debug_assert!(!outputs.is_empty());
    let mut mean = [0.0; NUM_MODES];
    for p in outputs {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let n = outputs.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    mean
}

/// Voting prediction for one record: resolve the pool, run every member,
/// average.
pub fn predict_voted(
    registry: &ModelRegistry,
    model_types: &[&str],
    record: &ShipmentRecord,
    derived: &DerivedDistances,
    maps: &CategoryMaps,
) -> Result<(ProbVector, ModeLabel), EnsembleError> {
    let pool = collect_models_for_record(record, model_types, registry)?;
    let mut outputs = Vec::with_capacity(pool.len());
    for member in &pool {
        let x = assemble_features(record, derived, member.schema, maps)?;
        outputs.push(member.model.predict_proba(&x)?);
    }
    let mean = vote_average(&outputs);
    Ok((mean, argmax_mode(&mean)))
}

/// One level-1 family in a stacking roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub spec: LearnerSpec,
    pub scope: ModelScope,
}

impl RosterEntry {
    pub fn new(spec: LearnerSpec, scope: ModelScope) -> Self {
        RosterEntry { spec, scope }
    }

    /// Family tag, e.g. `"rf-global"`, `"bag-sctg"`, `"extra-naics"`.
    pub fn tag(&self) -> String {
        format!("{}-{}", self.spec.short_name(), self.scope.token())
    }
}

/// Stacking configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackerConfig {
    pub roster: Vec<RosterEntry>,
    /// Feature names (in the global schema) appended after the roster
    /// probabilities.
    pub passthrough: Vec<String>,
    /// Out-of-fold protocol fold count.
    pub k: usize,
    pub meta: BoostedParams,
    /// Minimum category size for segmented roster members.
    pub min_samples: usize,
    pub schema_options: SchemaOptions,
}

impl Default for StackerConfig {
    fn default() -> Self {
        let mut roster = Vec::new();
        for variant in [
            ForestVariant::RandomForest,
            ForestVariant::Bagging,
            ForestVariant::ExtraTrees,
        ] {
            for scope in [ModelScope::Global, ModelScope::Sctg, ModelScope::Naics] {
                roster.push(RosterEntry::new(
                    LearnerSpec::Forest(ForestParams::for_variant(variant)),
                    scope,
                ));
            }
        }
        StackerConfig {
            roster,
            passthrough: default_passthrough(),
            k: 5,
            meta: BoostedParams::default(),
            min_samples: 50,
            schema_options: SchemaOptions::default(),
        }
    }
}

/// Default meta-learner passthrough: core numeric features and the derived
/// per-mode distances.
pub fn default_passthrough() -> Vec<String> {
    let mut names = vec![
        "sw".to_string(),
        "sv".to_string(),
        "v2w".to_string(),
        "gc_dist".to_string(),
    ];
    for m in 1..=NUM_MODES {
        names.push(format!("M{m}"));
    }
    names
}

/// A deployment-roster member of a fitted stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackMember {
    pub tag: String,
    pub model: MemberModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MemberModel {
    /// Uses the stack's shared global schema.
    Global(LearnerModel),
    /// Carries its own segment and fallback schemas.
    Segmented(SegmentedModel),
}

impl StackMember {
    /// This member's probabilities for one record; globally-scoped members
    /// assemble their row with `global_schema`.
    pub fn predict(
        &self,
        record: &ShipmentRecord,
        derived: &DerivedDistances,
        global_schema: &FeatureSchema,
        maps: &CategoryMaps,
    ) -> Result<ProbVector, EnsembleError> {
        let global_row;
        let row: &[f64] = match &self.model {
            MemberModel::Global(_) => {
                global_row = assemble_features(record, derived, global_schema, maps)?;
                &global_row
            }
            MemberModel::Segmented(_) => &[],
        };
        member_proba(&self.model, record, derived, row, maps)
    }
}

/// A fitted two-level stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedModel {
    /// Meta-feature layout: one tag per roster family (5 probabilities
    /// each, in order), then the passthrough feature names.
    pub layout: Vec<String>,
    pub passthrough: Vec<String>,
    pub k: usize,
    pub global_schema: FeatureSchema,
    pub members: Vec<StackMember>,
    pub meta: BoostedModel,
}

/// Leakage instrumentation for one out-of-fold build: every (row, family)
/// prediction is checked against the exact training-row set of the model
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OofAudit {
    /// (row, family) pairs checked; equals rows × families on success.
    pub checks: u64,
    /// Pairs where the producing model's training set contained the row.
    pub violations: u64,
}

impl StackedModel {
    /// Meta-feature width: 5 per roster family plus one per passthrough.
    pub fn meta_width(&self) -> usize {
        NUM_MODES * self.members.len() + self.passthrough.len()
    }

    fn live_layout(&self) -> Vec<String> {
        let mut layout: Vec<String> = self.members.iter().map(|m| m.tag.clone()).collect();
        layout.extend(self.passthrough.iter().cloned());
        layout
    }
}

/// Per-fold cache of global models, keyed by the exact learner spec, so a
/// segmented family's fallback can reuse the global family's model instead
/// of fitting a second copy on the same rows.
struct GlobalCache<'a> {
    x: &'a [Vec<f64>],
    y: &'a [ModeLabel],
    schema: &'a FeatureSchema,
    fitted: BTreeMap<String, LearnerModel>,
}

impl<'a> GlobalCache<'a> {
    fn new(x: &'a [Vec<f64>], y: &'a [ModeLabel], schema: &'a FeatureSchema) -> Self {
        GlobalCache {
            x,
            y,
            schema,
            fitted: BTreeMap::new(),
        }
    }

    fn get(&mut self, spec: &LearnerSpec, seed: u64) -> Result<LearnerModel, EnsembleError> {
        let key = serde_json::to_string(spec).expect("learner specs serialize");
        if let Some(model) = self.fitted.get(&key) {
            return Ok(model.clone());
        }
        let model = fit_learner(spec, self.x, self.y, seed)?;
        self.fitted.insert(key, model.clone());
        Ok(model)
    }
}

fn fit_family(
    entry: &RosterEntry,
    records: &[ShipmentRecord],
    derived: &[DerivedDistances],
    maps: &CategoryMaps,
    config: &StackerConfig,
    cache: &mut GlobalCache,
    seed: u64,
) -> Result<MemberModel, EnsembleError> {
    let tag = entry.tag();
    let family_seed = derive_seed(seed, &tag, 0);
    match entry.scope {
        ModelScope::Global => Ok(MemberModel::Global(cache.get(&entry.spec, family_seed)?)),
        ModelScope::Sctg | ModelScope::Naics => {
            let key = if entry.scope == ModelScope::Sctg {
                SegmentKey::Sctg
            } else {
                SegmentKey::Naics
            };
            let fallback_seed = derive_seed(seed, &format!("{tag}:fallback"), 0);
            let fallback = cache.get(&entry.spec, fallback_seed)?;
            let model = fit_segmented(
                records,
                derived,
                maps,
                key,
                &entry.spec,
                config.min_samples,
                config.schema_options,
                family_seed,
                Some((fallback, cache.schema.clone())),
            )?;
            Ok(MemberModel::Segmented(model))
        }
    }
}

fn member_proba(
    member: &MemberModel,
    record: &ShipmentRecord,
    derived: &DerivedDistances,
    global_row: &[f64],
    maps: &CategoryMaps,
) -> Result<ProbVector, EnsembleError> {
    match member {
        MemberModel::Global(model) => Ok(model.predict_proba(global_row)?),
        MemberModel::Segmented(model) => Ok(predict_segmented(model, record, derived, maps)?),
    }
}

/// Builds the out-of-fold meta-feature matrix.
///
/// For each fold `f`, every roster family is refit on the rows of folds
/// ≠ `f` (segmented families refit their per-category models and fallback on
/// that subset) and predicts only the rows of fold `f`. Passthrough feature
/// values are appended after the roster probabilities. The returned
/// [`OofAudit`] certifies, from the actual training-row sets used, that no
/// row's meta-features came from a model trained on that row.
pub fn build_oof_meta_features(
    records: &[ShipmentRecord],
    derived: &[DerivedDistances],
    maps: &CategoryMaps,
    config: &StackerConfig,
    folds: &FoldAssignment,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, OofAudit), EnsembleError> {
    let n = records.len();
    if derived.len() != n {
        return Err(EnsembleError::LengthMismatch {
            records: n,
            derived: derived.len(),
        });
    }
    if folds.assignments.len() != n {
        return Err(EnsembleError::FoldMismatch {
            folds: folds.assignments.len(),
            records: n,
        });
    }
    let labels: Vec<ModeLabel> = records.iter().map(|r| r.mode).collect();
    let global_schema = FeatureSchema::build(records, config.schema_options);
    let global_x = matrix(records, derived, &global_schema, maps)?;
    let passthrough_idx: Vec<usize> = config
        .passthrough
        .iter()
        .map(|name| {
            global_schema
                .position(name)
                .ok_or_else(|| EnsembleError::UnknownPassthrough(name.clone()))
        })
        .collect::<Result<_, _>>()?;

    let width = NUM_MODES * config.roster.len() + config.passthrough.len();
    let mut meta = vec![vec![0.0f64; width]; n];
    let mut audit = OofAudit::default();
    let fold_of = folds.fold_indices();

    for f in 0..folds.k {
        let train_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let test_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        if test_rows.is_empty() {
            continue;
        }
        // Instrumentation: membership mask built from the very index set the
        // subsetting below consumes.
        let mut train_mask = vec![false; n];
        for &i in &train_rows {
            train_mask[i] = true;
        }
        let sub_records: Vec<ShipmentRecord> =
            train_rows.iter().map(|&i| records[i].clone()).collect();
        let sub_derived: Vec<DerivedDistances> =
            train_rows.iter().map(|&i| derived[i]).collect();
        let sub_x: Vec<Vec<f64>> = train_rows.iter().map(|&i| global_x[i].clone()).collect();
        let sub_y: Vec<ModeLabel> = train_rows.iter().map(|&i| labels[i]).collect();
        let mut cache = GlobalCache::new(&sub_x, &sub_y, &global_schema);
        let fold_seed = derive_seed(seed, "oof-fold", f as u64);

        for (j, entry) in config.roster.iter().enumerate() {
            let member = fit_family(
                entry,
                &sub_records,
                &sub_derived,
                maps,
                config,
                &mut cache,
                fold_seed,
            )?;
            for &i in &test_rows {
                audit.checks += 1;
                if train_mask[i] {
                    audit.violations += 1;
                }
                let p = member_proba(&member, &records[i], &derived[i], &global_x[i], maps)?;
                meta[i][NUM_MODES * j..NUM_MODES * (j + 1)].copy_from_slice(&p);
            }
        }
    }
    for i in 0..n {
        for (j, &col) in passthrough_idx.iter().enumerate() {
            meta[i][NUM_MODES * config.roster.len() + j] = global_x[i][col];
        }
    }
    debug_assert_eq!(audit.violations, 0, "out-of-fold protocol leaked");
    Ok((meta, audit))
}

/// Fits a two-level stack: out-of-fold meta-features feed the boosted
/// meta-learner, and the deployment roster is refit on all training rows.
pub fn fit_stacker(
    records: &[ShipmentRecord],
    derived: &[DerivedDistances],
    maps: &CategoryMaps,
    config: &StackerConfig,
    folds: &FoldAssignment,
    seed: u64,
) -> Result<(StackedModel, OofAudit), EnsembleError> {
    if config.roster.is_empty() {
        return Err(EnsembleError::NoModelsAvailable);
    }
    let labels: Vec<ModeLabel> = records.iter().map(|r| r.mode).collect();
    let (meta_x, audit) = build_oof_meta_features(records, derived, maps, config, folds, seed)?;
    let meta = crate::learners::fit_boosted(&meta_x, &labels, &config.meta, derive_seed(seed, "stack-meta", 0))?;

    // Deployment roster: refit every family on ALL training rows.
    let global_schema = FeatureSchema::build(records, config.schema_options);
    let global_x = matrix(records, derived, &global_schema, maps)?;
    let mut cache = GlobalCache::new(&global_x, &labels, &global_schema);
    let deploy_seed = derive_seed(seed, "deploy", 0);
    let mut members = Vec::with_capacity(config.roster.len());
    for entry in &config.roster {
        let model = fit_family(entry, records, derived, maps, config, &mut cache, deploy_seed)?;
        members.push(StackMember {
            tag: entry.tag(),
            model,
        });
    }
    let mut layout: Vec<String> = members.iter().map(|m| m.tag.clone()).collect();
    layout.extend(config.passthrough.iter().cloned());
    Ok((
        StackedModel {
            layout,
            passthrough: config.passthrough.clone(),
            k: folds.k,
            global_schema,
            members,
            meta,
        },
        audit,
    ))
}

/// Stacked prediction for one record.
///
/// Level-1 probabilities are laid out in roster order, then passthrough
/// features, exactly as at fit time; a layout drift (e.g. reordered members)
/// is rejected as [`EnsembleError::SchemaMismatch`].
pub fn predict_stacked(
    model: &StackedModel,
    record: &ShipmentRecord,
    derived: &DerivedDistances,
    maps: &CategoryMaps,
) -> Result<ProbVector, EnsembleError> {
    let live = model.live_layout();
    if live != model.layout {
        return Err(EnsembleError::SchemaMismatch {
            expected: model.layout.join(", "),
            got: live.join(", "),
        });
    }
    let global_row = assemble_features(record, derived, &model.global_schema, maps)?;
    let mut meta_row = Vec::with_capacity(model.meta_width());
    for member in &model.members {
        let p = member_proba(&member.model, record, derived, &global_row, maps)?;
        meta_row.extend_from_slice(&p);
    }
    for name in &model.passthrough {
        let col = model
            .global_schema
            .position(name)
            .ok_or_else(|| EnsembleError::UnknownPassthrough(name.clone()))?;
        meta_row.push(global_row[col]);
    }
    Ok(model.meta.predict_proba(&meta_row)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{fit_tree, TreeParams};
    use crate::model::AreaType;
    use crate::model::ModeLabel::{ForHireTruck, Parcel, PrivateTruck};
    use crate::split::stratified_kfold;
    use crate::testutil::record;
    use proptest::prelude::*;

    fn maps() -> CategoryMaps {
        let mut areas = BTreeMap::new();
        areas.insert("A1".to_string(), AreaType::C);
        areas.insert("A2".to_string(), AreaType::M);
        CategoryMaps::with_default_groups(areas)
    }

    fn no_derived(n: usize) -> Vec<DerivedDistances> {
        vec![
            DerivedDistances {
                miles: [0.0; 5],
                imputed: [true; 5],
            };
            n
        ]
    }

    /// Rows whose mode is decided by a weight threshold — trivially
    /// separable for any tree learner.
    fn separable(n: usize) -> Vec<ShipmentRecord> {
        (0..n)
            .map(|i| {
                let mut r = record(&format!("r{i}"));
                r.sctg = if i % 2 == 0 { "01" } else { "20" }.to_string();
                r.sctg_group = if i % 2 == 0 { "G1" } else { "G5" }.to_string();
                r.naics = if i % 3 == 0 { "325" } else { "454" }.to_string();
                r.weight_lb = 1.0 + (i % 7) as f64;
                r.mode = if i % 7 < 3 { Parcel } else { ForHireTruck };
                r
            })
            .collect()
    }

    fn dt_spec() -> LearnerSpec {
        LearnerSpec::DecisionTree(TreeParams::default())
    }

    fn dt_entry(scope: ModelScope) -> RosterEntry {
        RosterEntry::new(dt_spec(), scope)
    }

    fn small_meta() -> BoostedParams {
        BoostedParams {
            n_rounds: 40,
            learning_rate: 0.4,
            max_depth: 3,
            ..BoostedParams::default()
        }
    }

    fn fit_registry(records: &[ShipmentRecord], names: &[&str]) -> ModelRegistry {
        let derived = no_derived(records.len());
        let schema = FeatureSchema::build(records, SchemaOptions::default());
        let x = matrix(records, &derived, &schema, &maps()).unwrap();
        let y: Vec<ModeLabel> = records.iter().map(|r| r.mode).collect();
        let mut registry = ModelRegistry::default();
        for name in names {
            let spec = dt_spec();
            registry.global.push(GlobalEntry {
                name: name.to_string(),
                model: fit_learner(&spec, &x, &y, 1).unwrap(),
                schema: schema.clone(),
            });
            for (key, bucket) in [(SegmentKey::Sctg, 0), (SegmentKey::Naics, 1)] {
                let seg = fit_segmented(
                    records,
                    &derived,
                    &maps(),
                    key,
                    &spec,
                    2,
                    SchemaOptions::default(),
                    1,
                    None,
                )
                .unwrap();
                let entry = SegmentedEntry {
                    name: name.to_string(),
                    model: seg,
                };
                if bucket == 0 {
                    registry.sctg.push(entry);
                } else {
                    registry.naics.push(entry);
                }
            }
        }
        registry
    }

    #[test]
    fn pool_counts_match_requested_types() {
        let records = separable(24);
        let registry = fit_registry(&records, &["rf", "bag"]);
        let pool = collect_models_for_record(&records[0], &["rf"], &registry).unwrap();
        assert_eq!(pool.len(), 3);
        let sources: Vec<ModelScope> = pool.iter().map(|m| m.source).collect();
        assert_eq!(
            sources,
            vec![ModelScope::Sctg, ModelScope::Naics, ModelScope::Global]
        );
        let pool = collect_models_for_record(&records[0], &["rf", "bag"], &registry).unwrap();
        assert_eq!(pool.len(), 6);
        let err = collect_models_for_record(&records[0], &["knn"], &registry).unwrap_err();
        assert!(matches!(err, EnsembleError::NoModelsAvailable));
    }

    #[test]
    fn unseen_category_slot_comes_from_the_segmented_fallback() {
        let records = separable(24);
        let registry = fit_registry(&records, &["rf"]);
        let mut unseen = record("u");
        unseen.sctg = "43".to_string();
        unseen.sctg_group = "G9".to_string();
        let pool = collect_models_for_record(&unseen, &["rf"], &registry).unwrap();
        let sctg_member = pool.iter().find(|m| m.source == ModelScope::Sctg).unwrap();
        assert_eq!(sctg_member.model, &registry.sctg[0].model.fallback);
    }

    #[test]
    fn vote_average_matches_hand_mean_and_tie_rule() {
        let p1 = [0.6, 0.4, 0.0, 0.0, 0.0];
        let p2 = [0.2, 0.8, 0.0, 0.0, 0.0];
        let mean = vote_average(&[p1, p2]);
        for (got, want) in mean.iter().zip([0.4, 0.6, 0.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert_eq!(argmax_mode(&mean), PrivateTruck);
        // Singleton pool is the identity.
        assert_eq!(vote_average(&[p1]), p1);
    }

    #[test]
    fn voted_prediction_is_a_valid_distribution() {
        let records = separable(24);
        let registry = fit_registry(&records, &["rf"]);
        let derived = no_derived(1);
        for r in records.iter().take(6) {
            let (p, label) = predict_voted(&registry, &["rf"], r, &derived[0], &maps()).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(label, argmax_mode(&p));
        }
    }

    proptest! {
        /// Dyadic probabilities (i/256) make pool sums exact, so averaging is
        /// bitwise permutation-invariant, argmax tie rule included.
        #[test]
        fn voting_is_permutation_invariant(
            pool in prop::collection::vec(
                prop::array::uniform5(0u8..=255).prop_map(|raw| {
                    let mut p = [0.0f64; NUM_MODES];
                    for (slot, r) in p.iter_mut().zip(raw) {
                        *slot = r as f64 / 256.0;
                    }
                    p
                }),
                1..10,
            ),
            seed in 0u64..1000,
        ) {
            let mean = vote_average(&pool);
            let mut shuffled = pool.clone();
            let mut rng = crate::rng::rng_for(seed, "shuffle", 0);
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut rng);
            let mean2 = vote_average(&shuffled);
            prop_assert_eq!(mean, mean2);
            prop_assert_eq!(argmax_mode(&mean), argmax_mode(&mean2));
        }
    }

    #[test]
    fn oof_rows_match_a_manually_fit_complement_model() {
        let records = separable(16);
        let derived = no_derived(records.len());
        let folds = stratified_kfold(&records, 2, 5).unwrap();
        let config = StackerConfig {
            roster: vec![dt_entry(ModelScope::Global)],
            passthrough: vec![],
            k: 2,
            meta: small_meta(),
            min_samples: 2,
            schema_options: SchemaOptions::default(),
        };
        let (meta, audit) =
            build_oof_meta_features(&records, &derived, &maps(), &config, &folds, 3).unwrap();
        assert_eq!(audit.violations, 0);
        assert_eq!(audit.checks, records.len() as u64);

        let schema = FeatureSchema::build(&records, SchemaOptions::default());
        let x = matrix(&records, &derived, &schema, &maps()).unwrap();
        let fold_of = folds.fold_indices();
        for f in 0..2 {
            let train: Vec<usize> = (0..records.len()).filter(|&i| fold_of[i] != f).collect();
            let xs: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let ys: Vec<ModeLabel> = train.iter().map(|&i| records[i].mode).collect();
            let tree = fit_tree(&xs, &ys, &TreeParams::default()).unwrap();
            for i in (0..records.len()).filter(|&i| fold_of[i] == f) {
                let expected = tree.predict_proba(&x[i]).unwrap();
                assert_eq!(&meta[i][..NUM_MODES], &expected);
            }
        }
    }

    #[test]
    fn meta_width_is_five_per_family_plus_passthrough() {
        let records = separable(30);
        let derived = no_derived(records.len());
        let folds = stratified_kfold(&records, 2, 5).unwrap();
        let config = StackerConfig {
            roster: vec![
                dt_entry(ModelScope::Global),
                dt_entry(ModelScope::Global),
                dt_entry(ModelScope::Global),
                dt_entry(ModelScope::Global),
                dt_entry(ModelScope::Sctg),
                dt_entry(ModelScope::Naics),
            ],
            passthrough: vec![
                "sw".to_string(),
                "sv".to_string(),
                "v2w".to_string(),
                "gc_dist".to_string(),
            ],
            k: 2,
            meta: small_meta(),
            min_samples: 2,
            schema_options: SchemaOptions::default(),
        };
        let (meta, audit) =
            build_oof_meta_features(&records, &derived, &maps(), &config, &folds, 3).unwrap();
        assert_eq!(meta[0].len(), 34);
        assert_eq!(audit.checks, (records.len() * 6) as u64);
        assert_eq!(audit.violations, 0);
        // Passthrough columns carry the raw feature values.
        let schema = FeatureSchema::build(&records, SchemaOptions::default());
        let x = matrix(&records, &derived, &schema, &maps()).unwrap();
        let sw = schema.position("sw").unwrap();
        for i in 0..records.len() {
            assert_eq!(meta[i][30], x[i][sw]);
        }
    }

    #[test]
    fn unknown_passthrough_name_is_rejected() {
        let records = separable(12);
        let derived = no_derived(records.len());
        let folds = stratified_kfold(&records, 2, 5).unwrap();
        let config = StackerConfig {
            roster: vec![dt_entry(ModelScope::Global)],
            passthrough: vec!["no_such_feature".to_string()],
            k: 2,
            meta: small_meta(),
            min_samples: 2,
            schema_options: SchemaOptions::default(),
        };
        let err =
            build_oof_meta_features(&records, &derived, &maps(), &config, &folds, 3).unwrap_err();
        assert!(matches!(err, EnsembleError::UnknownPassthrough(name) if name == "no_such_feature"));
    }

    #[test]
    fn perfect_oof_probabilities_give_training_accuracy_one() {
        let records = separable(40);
        let derived = no_derived(records.len());
        let folds = stratified_kfold(&records, 2, 5).unwrap();
        let config = StackerConfig {
            roster: vec![dt_entry(ModelScope::Global)],
            passthrough: vec![],
            k: 2,
            meta: small_meta(),
            min_samples: 2,
            schema_options: SchemaOptions::default(),
        };
        let (stack, audit) =
            fit_stacker(&records, &derived, &maps(), &config, &folds, 9).unwrap();
        assert_eq!(audit.violations, 0);
        let correct = records
            .iter()
            .zip(&derived)
            .filter(|(r, d)| {
                let p = predict_stacked(&stack, r, d, &maps()).unwrap();
                argmax_mode(&p) == r.mode
            })
            .count();
        assert_eq!(correct, records.len());
    }

    #[test]
    fn identical_roster_families_agree_with_the_stack() {
        // Two copies of the same family emit identical probabilities; the
        // stack's hard predictions must equal theirs.
        let records = separable(40);
        let derived = no_derived(records.len());
        let folds = stratified_kfold(&records, 2, 5).unwrap();
        let config = StackerConfig {
            roster: vec![dt_entry(ModelScope::Global), dt_entry(ModelScope::Global)],
            passthrough: vec![],
            k: 2,
            meta: small_meta(),
            min_samples: 2,
            schema_options: SchemaOptions::default(),
        };
        let (stack, _) = fit_stacker(&records, &derived, &maps(), &config, &folds, 9).unwrap();
        let schema = FeatureSchema::build(&records, SchemaOptions::default());
        let x = matrix(&records, &derived, &schema, &maps()).unwrap();
        let y: Vec<ModeLabel> = records.iter().map(|r| r.mode).collect();
        let family = fit_learner(&dt_spec(), &x, &y, 1).unwrap();
        for (i, (r, d)) in records.iter().zip(&derived).enumerate() {
            let stacked = argmax_mode(&predict_stacked(&stack, r, d, &maps()).unwrap());
            let own = argmax_mode(&family.predict_proba(&x[i]).unwrap());
            assert_eq!(stacked, own);
        }
    }

    #[test]
    fn stacker_is_deterministic_for_a_fixed_seed() {
        let records = separable(30);
        let derived = no_derived(records.len());
        let folds = stratified_kfold(&records, 3, 5).unwrap();
        let config = StackerConfig {
            roster: vec![dt_entry(ModelScope::Global), dt_entry(ModelScope::Sctg)],
            passthrough: default_passthrough(),
            k: 3,
            meta: small_meta(),
            min_samples: 2,
            schema_options: SchemaOptions::default(),
        };
        let run = || fit_stacker(&records, &derived, &maps(), &config, &folds, 11).unwrap();
        let (a, audit_a) = run();
        let (b, audit_b) = run();
        assert_eq!(a, b);
        assert_eq!(audit_a, audit_b);
    }

    #[test]
    fn permuted_roster_without_retraining_is_a_layout_error() {
        let records = separable(30);
        let derived = no_derived(records.len());
        let folds = stratified_kfold(&records, 2, 5).unwrap();
        let config = StackerConfig {
            roster: vec![dt_entry(ModelScope::Global), dt_entry(ModelScope::Sctg)],
            passthrough: vec![],
            k: 2,
            meta: small_meta(),
            min_samples: 2,
            schema_options: SchemaOptions::default(),
        };
        let (mut stack, _) = fit_stacker(&records, &derived, &maps(), &config, &folds, 9).unwrap();
        assert!(predict_stacked(&stack, &records[0], &derived[0], &maps()).is_ok());
        stack.members.swap(0, 1);
        let err = predict_stacked(&stack, &records[0], &derived[0], &maps()).unwrap_err();
        assert!(matches!(err, EnsembleError::SchemaMismatch { .. }));
    }

    #[test]
    fn stacked_output_sums_to_one() {
        let records = separable(30);
        let derived = no_derived(records.len());
        let folds = stratified_kfold(&records, 2, 5).unwrap();
        let config = StackerConfig {
            roster: vec![dt_entry(ModelScope::Global)],
            passthrough: default_passthrough(),
            k: 2,
            meta: small_meta(),
            min_samples: 2,
            schema_options: SchemaOptions::default(),
        };
        let (stack, _) = fit_stacker(&records, &derived, &maps(), &config, &folds, 9).unwrap();
        for (r, d) in records.iter().zip(&derived) {
            let p = predict_stacked(&stack, r, d, &maps()).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn default_config_matches_the_documented_shape() {
        let config = StackerConfig::default();
        assert_eq!(config.roster.len(), 9);
        assert_eq!(config.k, 5);
        assert_eq!(config.min_samples, 50);
        let tags: Vec<String> = config.roster.iter().map(|e| e.tag()).collect();
        assert!(tags.contains(&"rf-global".to_string()));
        assert!(tags.contains(&"bag-sctg".to_string()));
        assert!(tags.contains(&"extra-naics".to_string()));
        assert_eq!(
            config.passthrough,
            vec!["sw", "sv", "v2w", "gc_dist", "M1", "M2", "M3", "M4", "M5"]
        );
    }
}
