//! Per-category ("local") models: one dedicated learner per SCTG or NAICS
//! value, plus a global fallback, dispatched by the record's category.
//!
//! A local model sees only its own category's training rows, and its feature
//! schema drops the one-hot blocks of its own key (they are constant within
//! the segment); the *other* key's features remain, so segmentation and
//! category features coexist. Categories below `min_samples` training rows
//! are not given a model — their records route to the fallback, as do
//! categories never seen in training, making dispatch total.

use crate::features::{
    assemble_features, DerivedDistances, FeatureError, FeatureSchema, SchemaOptions,
};
use crate::learners::{fit_learner, LearnerError, LearnerModel, LearnerSpec, ProbVector};
use crate::model::{CategoryMaps, ModeLabel, ShipmentRecord};
use crate::rng::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Which record field segments the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SegmentKey {
    Sctg,
    Naics,
}

impl SegmentKey {
    pub fn value_of<'a>(self, record: &'a ShipmentRecord) -> &'a str {
        match self {
            SegmentKey::Sctg => &record.sctg,
            SegmentKey::Naics => &record.naics,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            SegmentKey::Sctg => "sctg",
            SegmentKey::Naics => "naics",
        }
    }

    /// Schema options for this key's local models: the base options with the
    /// key's own one-hot blocks dropped.
    pub fn segment_options(self, base: SchemaOptions) -> SchemaOptions {
        match self {
            SegmentKey::Sctg => base.for_sctg_segment(),
            SegmentKey::Naics => base.for_naics_segment(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SegmentedError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("records and derived distances differ in length: {records} vs {derived}")]
    LengthMismatch { records: usize, derived: usize },
}

/// A fitted per-category model family with its fallback.
///
/// Serializes to a single JSON document carrying the key kind, the category
/// list with per-category models, and the fallback — everything needed to
/// re-create dispatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedModel {
    pub key: SegmentKey,
    pub spec: LearnerSpec,
    pub min_samples: usize,
    /// Schema local models were fit with (own key dropped).
    pub segment_schema: FeatureSchema,
    /// Category value → its dedicated model.
    pub models: BTreeMap<String, LearnerModel>,
    /// Global model used when a category has no dedicated model.
    pub fallback: LearnerModel,
    /// Schema the fallback was fit with (all blocks).
    pub fallback_schema: FeatureSchema,
}

impl SegmentedModel {
    /// The model and schema that will serve this record.
    pub fn resolve(&self, record: &ShipmentRecord) -> (&LearnerModel, &FeatureSchema) {
        match self.models.get(self.key.value_of(record)) {
            Some(model) => (model, &self.segment_schema),
            None => (&self.fallback, &self.fallback_schema),
        }
    }

    /// Whether the record's category has a dedicated model.
    pub fn has_local(&self, record: &ShipmentRecord) -> bool {
        self.models.contains_key(self.key.value_of(record))
    }

    pub fn categories(&self) -> Vec<&str> {
        self.models.keys().map(String::as_str).collect()
    }
}

/// Fits one model per qualifying category plus (or reusing) a global
/// fallback.
///
/// `derived` must be parallel to `records` (training rows with fold-excluded
/// derived distances). `prefit_fallback` lets callers that already fit a
/// global model of the same spec on exactly these records donate it instead
/// of fitting a second copy.
#[allow(clippy::too_many_arguments)]
pub fn fit_segmented(
    records: &[ShipmentRecord],
    derived: &[DerivedDistances],
    maps: &CategoryMaps,
    key: SegmentKey,
    spec: &LearnerSpec,
    min_samples: usize,
    base_options: SchemaOptions,
    seed: u64,
    prefit_fallback: Option<(LearnerModel, FeatureSchema)>,
) -> Result<SegmentedModel, SegmentedError> {
    if records.len() != derived.len() {
        return Err(SegmentedError::LengthMismatch {
            records: records.len(),
            derived: derived.len(),
        });
    }
    if records.is_empty() {
        return Err(SegmentedError::Learner(LearnerError::EmptyTrainingSet));
    }
    let labels: Vec<ModeLabel> = records.iter().map(|r| r.mode).collect();

    // Fallback: fit on ALL rows with the full (global) schema, unless donated.
    let (fallback, fallback_schema) = match prefit_fallback {
        Some((model, schema)) => (model, schema),
        None => {
            let schema = FeatureSchema::build(records, base_options);
            let x = matrix(records, derived, &schema, maps)?;
            let model = fit_learner(spec, &x, &labels, derive_seed(seed, "segment-fallback", 0))?;
            (model, schema)
        }
    };

    let segment_schema = FeatureSchema::build(records, key.segment_options(base_options));
    let seg_x = matrix(records, derived, &segment_schema, maps)?;

    // Row indices per category, in deterministic (sorted-key) order.
    let mut by_category: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_category.entry(key.value_of(r)).or_default().push(i);
    }
    let qualifying: Vec<(&str, Vec<usize>)> = by_category
        .into_iter()
        .filter(|(_, rows)| rows.len() >= min_samples)
        .collect();

    let fitted: Result<Vec<(String, LearnerModel)>, SegmentedError> = qualifying
        .into_par_iter()
        .map(|(category, rows)| {
            let x: Vec<Vec<f64>> = rows.iter().map(|&i| seg_x[i].clone()).collect();
            let y: Vec<ModeLabel> = rows.iter().map(|&i| labels[i]).collect();
            let model_seed = derive_seed(seed, &format!("segment:{}:{category}", key.token()), 0);
            let model = fit_learner(spec, &x, &y, model_seed)?;
            Ok((category.to_string(), model))
        })
        .collect();
    let models: BTreeMap<String, LearnerModel> = fitted?.into_iter().collect();

    Ok(SegmentedModel {
        key,
        spec: spec.clone(),
        min_samples,
        segment_schema,
        models,
        fallback,
        fallback_schema,
    })
}

/// Probability prediction with per-category dispatch.
pub fn predict_segmented(
    model: &SegmentedModel,
    record: &ShipmentRecord,
    derived: &DerivedDistances,
    maps: &CategoryMaps,
) -> Result<ProbVector, SegmentedError> {
    let (learner, schema) = model.resolve(record);
    let x = assemble_features(record, derived, schema, maps)?;
    Ok(learner.predict_proba(&x)?)
}

/// Assembles the full feature matrix for one schema.
pub fn matrix(
    records: &[ShipmentRecord],
    derived: &[DerivedDistances],
    schema: &FeatureSchema,
    maps: &CategoryMaps,
) -> Result<Vec<Vec<f64>>, FeatureError> {
    records
        .iter()
        .zip(derived)
        .map(|(r, d)| assemble_features(r, d, schema, maps))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{argmax_mode, TreeParams};
    use crate::model::AreaType;
    use crate::model::ModeLabel::{Air, ForHireTruck, Parcel, PrivateTruck};
    use crate::testutil::record;

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

    /// Two SCTG categories with opposite label rules on the same feature, so
    /// only segmentation (or the sctg one-hot) can separate them.
    fn opposing_categories(n_per: usize) -> Vec<ShipmentRecord> {
        let mut records = Vec::new();
        for i in 0..n_per {
            let heavy = i % 2 == 0;
            let mut a = record(&format!("a{i}"));
            a.sctg = "01".to_string();
            a.sctg_group = "G1".to_string();
            a.weight_lb = if heavy { 100.0 } else { 1.0 };
            a.mode = if heavy { ForHireTruck } else { Parcel };
            records.push(a);
            let mut b = record(&format!("b{i}"));
            b.sctg = "20".to_string();
            b.sctg_group = "G5".to_string();
            b.weight_lb = if heavy { 100.0 } else { 1.0 };
            // Opposite rule in category 20.
            b.mode = if heavy { Parcel } else { ForHireTruck };
            records.push(b);
        }
        records
    }

    fn dt_spec() -> LearnerSpec {
        LearnerSpec::DecisionTree(TreeParams::default())
    }

    #[test]
    fn qualifying_categories_get_dedicated_models() {
        let records = opposing_categories(10);
        let derived = no_derived(records.len());
        let model = fit_segmented(
            &records,
            &derived,
            &maps(),
            SegmentKey::Sctg,
            &dt_spec(),
            5,
            SchemaOptions::default(),
            1,
            None,
        )
        .unwrap();
        assert_eq!(model.categories(), vec!["01", "20"]);
        // Dispatch returns the dedicated model's output.
        for r in &records {
            assert!(model.has_local(r));
            let p = predict_segmented(&model, r, &derived[0], &maps()).unwrap();
            assert_eq!(argmax_mode(&p), r.mode);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn small_categories_route_to_the_fallback() {
        let mut records = opposing_categories(10);
        // Three rows of a rare category.
        for i in 0..3 {
            let mut r = record(&format!("rare{i}"));
            r.sctg = "43".to_string();
            r.sctg_group = "G9".to_string();
            r.mode = Air;
            records.push(r);
        }
        let derived = no_derived(records.len());
        let model = fit_segmented(
            &records,
            &derived,
            &maps(),
            SegmentKey::Sctg,
            &dt_spec(),
            100,
            SchemaOptions::default(),
            1,
            None,
        )
        .unwrap();
        // min_samples=100: nobody qualifies; everything is fallback.
        assert!(model.categories().is_empty());
        let rare = &records[records.len() - 1];
        let (resolved, schema) = model.resolve(rare);
        assert_eq!(resolved, &model.fallback);
        let x = assemble_features(rare, &derived[0], schema, &maps()).unwrap();
        let expected = model.fallback.predict_proba(&x).unwrap();
        let got = predict_segmented(&model, rare, &derived[0], &maps()).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn forty_three_categories_get_forty_three_models() {
        let mut records = Vec::new();
        let groups = CategoryMaps::default_sctg_groups();
        for code in 1..=43u32 {
            let sctg = format!("{code:02}");
            for i in 0..2 {
                let mut r = record(&format!("{sctg}-{i}"));
                r.sctg_group = groups.get(&sctg).unwrap().clone();
                r.sctg = sctg.clone();
                r.mode = if i == 0 { ForHireTruck } else { PrivateTruck };
                r.weight_lb = 1.0 + i as f64;
                records.push(r);
            }
        }
        let derived = no_derived(records.len());
        let model = fit_segmented(
            &records,
            &derived,
            &maps(),
            SegmentKey::Sctg,
            &dt_spec(),
            2,
            SchemaOptions::default(),
            1,
            None,
        )
        .unwrap();
        assert_eq!(model.models.len(), 43);
    }

    #[test]
    fn unseen_category_routes_to_fallback() {
        let records = opposing_categories(10);
        let derived = no_derived(records.len());
        let model = fit_segmented(
            &records,
            &derived,
            &maps(),
            SegmentKey::Sctg,
            &dt_spec(),
            5,
            SchemaOptions::default(),
            1,
            None,
        )
        .unwrap();
        let mut unseen = record("u");
        unseen.sctg = "30".to_string();
        unseen.sctg_group = "G6".to_string();
        assert!(!model.has_local(&unseen));
        let p = predict_segmented(&model, &unseen, &no_derived(1)[0], &maps()).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn segment_schema_drops_own_key_but_keeps_the_other() {
        let records = opposing_categories(6);
        let derived = no_derived(records.len());
        let sctg_model = fit_segmented(
            &records,
            &derived,
            &maps(),
            SegmentKey::Sctg,
            &dt_spec(),
            1,
            SchemaOptions::default(),
            1,
            None,
        )
        .unwrap();
        let names = sctg_model.segment_schema.feature_names().join(",");
        assert!(!names.contains("sctg"), "sctg blocks must be dropped: {names}");
        assert!(names.contains("naics="));
        // Fallback keeps everything.
        let fb = sctg_model.fallback_schema.feature_names().join(",");
        assert!(fb.contains("sctg=") && fb.contains("sctg_n=") && fb.contains("naics="));

        let naics_model = fit_segmented(
            &records,
            &derived,
            &maps(),
            SegmentKey::Naics,
            &dt_spec(),
            1,
            SchemaOptions::default(),
            1,
            None,
        )
        .unwrap();
        let names = naics_model.segment_schema.feature_names().join(",");
        assert!(!names.contains("naics="));
        assert!(names.contains("sctg="));
    }

    #[test]
    fn segmentation_beats_a_single_global_tree_on_opposing_rules() {
        // Shallow trees can't afford the extra sctg split; the local models
        // don't need it.
        let records = opposing_categories(20);
        let derived = no_derived(records.len());
        let shallow = LearnerSpec::DecisionTree(TreeParams {
            max_depth: Some(1),
            ..TreeParams::default()
        });
        let model = fit_segmented(
            &records,
            &derived,
            &maps(),
            SegmentKey::Sctg,
            &shallow,
            5,
            SchemaOptions::default(),
            1,
            None,
        )
        .unwrap();
        let seg_correct = records
            .iter()
            .filter(|r| {
                let p = predict_segmented(&model, r, &derived[0], &maps()).unwrap();
                argmax_mode(&p) == r.mode
            })
            .count();
        let global_schema = FeatureSchema::build(&records, SchemaOptions::default());
        let x = matrix(&records, &derived, &global_schema, &maps()).unwrap();
        let y: Vec<ModeLabel> = records.iter().map(|r| r.mode).collect();
        let global = fit_learner(&shallow, &x, &y, 1).unwrap();
        let glob_correct = records
            .iter()
            .zip(&x)
            .filter(|(r, row)| argmax_mode(&global.predict_proba(row).unwrap()) == r.mode)
            .count();
        assert_eq!(seg_correct, records.len());
        assert!(glob_correct < seg_correct);
    }

    #[test]
    fn donated_fallback_is_used_verbatim() {
        let records = opposing_categories(8);
        let derived = no_derived(records.len());
        let schema = FeatureSchema::build(&records, SchemaOptions::default());
        let x = matrix(&records, &derived, &schema, &maps()).unwrap();
        let y: Vec<ModeLabel> = records.iter().map(|r| r.mode).collect();
        let donated = fit_learner(&dt_spec(), &x, &y, 99).unwrap();
        let model = fit_segmented(
            &records,
            &derived,
            &maps(),
            SegmentKey::Sctg,
            &dt_spec(),
            1000, // nothing qualifies; fallback serves everyone
            SchemaOptions::default(),
            1,
            Some((donated.clone(), schema.clone())),
        )
        .unwrap();
        assert_eq!(model.fallback, donated);
        assert_eq!(model.fallback_schema, schema);
    }

    #[test]
    fn fit_is_deterministic_for_a_fixed_seed() {
        let records = opposing_categories(8);
        let derived = no_derived(records.len());
        let spec = LearnerSpec::from_name("rf").unwrap();
        let spec = match spec {
            LearnerSpec::Forest(mut p) => {
                p.n_trees = 4;
                LearnerSpec::Forest(p)
            }
            other => other,
        };
        let fit = || {
            fit_segmented(
                &records,
                &derived,
                &maps(),
                SegmentKey::Sctg,
                &spec,
                5,
                SchemaOptions::default(),
                7,
                None,
            )
            .unwrap()
        };
        assert_eq!(fit(), fit());
    }
}
