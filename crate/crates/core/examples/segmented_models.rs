//! Per-category local models versus one global model.
//!
//! Commodity categories and shipper industries choose modes by different
//! rules (a chemicals shipper weighs distance differently than an e-commerce
//! fulfiller). A segmented model fits one forest per category, falling back
//! to a donated global model for categories too small to trust, and routes
//! each record to its category's model at prediction time.
//!
//! Run with: `cargo run --example segmented_models`

use freightmode::features::{
    build_distance_table, derive_distances, derive_training_features_oob, fit_imputation,
    FeatureSchema, SchemaOptions,
};
use freightmode::learners::{argmax_mode, fit_learner, LearnerSpec};
use freightmode::model::{CategoryMaps, ModeLabel};
use freightmode::segmented::{fit_segmented, matrix, predict_segmented, SegmentKey};
use freightmode::split::{stratified_kfold, stratified_split};
use freightmode::synth::{generate, SynthConfig};

fn main() {
    let config = SynthConfig {
        n_records: 20_000,
        ..SynthConfig::default()
    };
    let out = generate(&config, 42).expect("generation succeeds");
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

    let mut spec = LearnerSpec::from_name("rf").expect("known learner");
    if let LearnerSpec::Forest(params) = &mut spec {
        params.n_trees = 20;
        params.max_depth = Some(8);
    }

    // The shared baseline: one forest over everything.
    let global = fit_learner(&spec, &x, &y, 3).expect("fit");
    let xt = matrix(&test, &derived_test, &schema, &maps).expect("features");
    let global_acc = xt
        .iter()
        .zip(&truths)
        .filter(|(row, t)| argmax_mode(&global.predict_proba(row).unwrap()) == **t)
        .count() as f64
        / truths.len() as f64;
    println!("global rf: accuracy {global_acc:.4}\n");

    for key in [SegmentKey::Sctg, SegmentKey::Naics] {
        let seg = fit_segmented(
            &train,
            &derived_train,
            &maps,
            key,
            &spec,
            50,
            options,
            4,
            Some((global.clone(), schema.clone())),
        )
        .expect("segmented fit");
        let hits = test
            .iter()
            .zip(&derived_test)
            .zip(&truths)
            .filter(|((record, derived), t)| {
                argmax_mode(&predict_segmented(&seg, record, derived, &maps).unwrap()) == **t
            })
            .count();
        let acc = hits as f64 / truths.len() as f64;
        println!(
            "{key:?}-local: {} category models, accuracy {acc:.4} ({:+.4} vs global)",
            seg.categories().len(),
            acc - global_acc
        );
        for category in seg.categories() {
            let n = train.iter().filter(|r| key.value_of(r) == category).count();
            println!("  {category}: {n} training records");
        }
        println!();
    }
}
