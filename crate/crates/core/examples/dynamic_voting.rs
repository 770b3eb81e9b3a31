//! Dynamic voting over a registry of trained models.
//!
//! The registry holds model families by scope: global models plus
//! commodity-segmented (SCTG) and industry-segmented (NAICS) families. A vote
//! names the families it wants ("rf", "dt", ...) and each record resolves its
//! own pool: a named family contributes its global model and, where a
//! segmented family of that name exists, the local model for the record's
//! own category. The vote is the mean of the pool's probability vectors, so
//! two records with different commodities can be scored by different model
//! pools under the same vote.
//!
//! Run with: `cargo run --example dynamic_voting`

use freightmode::ensemble::{
    collect_models_for_record, predict_voted, EnsembleError, GlobalEntry, ModelRegistry,
    SegmentedEntry,
};
use freightmode::features::{
    build_distance_table, derive_distances, derive_training_features_oob, fit_imputation,
    FeatureSchema, SchemaOptions,
};
use freightmode::learners::{fit_learner, LearnerSpec};
use freightmode::model::{CategoryMaps, ModeLabel};
use freightmode::segmented::{fit_segmented, matrix, SegmentKey};
use freightmode::split::{stratified_kfold, stratified_split};
use freightmode::synth::{generate, SynthConfig};

fn main() {
    let config = SynthConfig {
        n_records: 12_000,
        ..SynthConfig::default()
    };
    let out = generate(&config, 5).expect("generation succeeds");
    let maps = CategoryMaps::with_default_groups(out.area_types.clone());
    let split = stratified_split(&out.records, 0.2, 1).expect("split");
    let train: Vec<_> = split
        .train_indices()
        .into_iter()
        .map(|i| out.records[i].clone())
        .collect();
    let test: Vec<_> = split
        .test_indices()
        .into_iter()
        .map(|i| out.records[i].clone())
        .collect();
    let folds = stratified_kfold(&train, 5, 2).expect("folds");

    let table = build_distance_table(&train);
    let imputation = fit_imputation(&train);
    let derived_train = derive_training_features_oob(&train, &folds);
    let derived_test: Vec<_> = test
        .iter()
        .map(|r| derive_distances(r, &table, &imputation))
        .collect();

    let options = SchemaOptions::default();
    let schema = FeatureSchema::build(&train, options);
    let x = matrix(&train, &derived_train, &schema, &maps).expect("features");
    let y: Vec<ModeLabel> = train.iter().map(|r| r.mode).collect();
    let truths: Vec<ModeLabel> = test.iter().map(|r| r.mode).collect();

    // Three global families, plus a commodity-segmented family for "rf".
    let mut registry = ModelRegistry::default();
    for name in ["rf", "dt", "nb"] {
        let mut spec = LearnerSpec::from_name(name).expect("known learner");
        if let LearnerSpec::Forest(params) = &mut spec {
            params.n_trees = 15;
            params.max_depth = Some(8);
        }
        let model = fit_learner(&spec, &x, &y, 3).expect("fit");
        registry.global.push(GlobalEntry {
            name: name.to_string(),
            model,
            schema: schema.clone(),
        });
    }
    let mut rf_spec = LearnerSpec::from_name("rf").expect("known learner");
    if let LearnerSpec::Forest(params) = &mut rf_spec {
        params.n_trees = 15;
        params.max_depth = Some(8);
    }
    let seg = fit_segmented(
        &train,
        &derived_train,
        &maps,
        SegmentKey::Sctg,
        &rf_spec,
        50,
        options,
        4,
        None,
    )
    .expect("segmented fit");
    registry.sctg.push(SegmentedEntry {
        name: "rf".to_string(),
        model: seg,
    });

    // What one record's pool looks like: the "rf" family resolves to two
    // members, the global forest and this record's own commodity model.
    let probe = &test[0];
    let pool = collect_models_for_record(probe, &["rf", "dt"], &registry).expect("pool");
    println!(
        "pool for record {} (sctg {}) under vote [rf, dt]:",
        probe.id, probe.sctg
    );
    for member in &pool {
        println!("  {:<7} {}", member.source.token(), member.name);
    }

    let accuracy_of = |types: &[&str]| -> f64 {
        let hits = test
            .iter()
            .zip(&derived_test)
            .zip(&truths)
            .filter(|((record, derived), t)| {
                let (_, label) = predict_voted(&registry, types, record, derived, &maps)
                    .expect("vote resolves");
                label == **t
            })
            .count();
        hits as f64 / truths.len() as f64
    };

    println!("\nsingle global families:");
    for types in [["dt"], ["nb"]] {
        println!("  {:<12} accuracy {:.4}", types[0], accuracy_of(&types));
    }
    println!("\nvotes:");
    for types in [
        vec!["rf"],
        vec!["rf", "dt"],
        vec!["rf", "dt", "nb"],
    ] {
        let label = if types == ["rf"] {
            "rf (global+local)".to_string()
        } else {
            types.join("+")
        };
        println!("  {:<18} accuracy {:.4}", label, accuracy_of(&types));
    }

    // Asking for a family nobody trained is an error, not a silent skip.
    match predict_voted(&registry, &["knn"], probe, &derived_test[0], &maps) {
        Err(EnsembleError::NoModelsAvailable) => {
            println!("\nvote [knn] fails: no models in the pool match the requested types")
        }
        other => panic!("expected NoModelsAvailable, got {other:?}"),
    }
}
