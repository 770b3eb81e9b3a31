//! Fit a random forest with and without the derived distance features.
//!
//! Raw great-circle distance describes the geometry of a shipment; the
//! derived per-mode medians describe the *lanes* — which modes actually
//! serve an origin-destination pair and at what routed length. The
//! side-by-side fit shows how much of the mode decision lives in the lanes.
//!
//! Run with: `cargo run --example train_forest`

use freightmode::eval::{confusion, metrics};
use freightmode::features::{
    build_distance_table, derive_distances, derive_training_features_oob, fit_imputation,
    FeatureSchema, SchemaOptions,
};
use freightmode::learners::{argmax_mode, fit_learner, LearnerSpec};
use freightmode::model::{CategoryMaps, ModeLabel};
use freightmode::segmented::matrix;
use freightmode::split::{stratified_kfold, stratified_split};
use freightmode::synth::{generate, SynthConfig};
use std::time::Instant;

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

    let y: Vec<ModeLabel> = train.iter().map(|r| r.mode).collect();
    let truths: Vec<ModeLabel> = test.iter().map(|r| r.mode).collect();
    // "rf" is the calibrated default: 100 trees, sqrt feature subsampling.
    // Trim it for an example-sized run.
    let mut spec = LearnerSpec::from_name("rf").expect("known learner");
    if let LearnerSpec::Forest(params) = &mut spec {
        params.n_trees = 20;
        params.max_depth = Some(8);
    }

    for (label, options) in [
        ("with derived distances", SchemaOptions::default()),
        (
            "without derived distances",
            SchemaOptions::default().without_derived_distances(),
        ),
    ] {
        let schema = FeatureSchema::build(&train, options);
        let x = matrix(&train, &derived_train, &schema, &maps).expect("features");
        let xt = matrix(&test, &derived_test, &schema, &maps).expect("features");

        let start = Instant::now();
        let model = fit_learner(&spec, &x, &y, 3).expect("fit");
        let fit_time = start.elapsed();

        let preds: Vec<ModeLabel> = xt
            .iter()
            .map(|row| argmax_mode(&model.predict_proba(row).expect("predict")))
            .collect();
        let m = metrics(&confusion(&preds, &truths).expect("confusion")).expect("metrics");
        println!(
            "{label}: {} features, fit {fit_time:?}",
            schema.len()
        );
        println!(
            "  accuracy {:.4}  balanced accuracy {:.4}  weighted F1 {:.4}",
            m.accuracy, m.balanced_accuracy, m.f1_weighted
        );
        for mode in ModeLabel::ALL {
            let c = &m.per_class[mode.index()];
            println!(
                "    {:<14} support {:>5}  precision {:.3}  recall {:.3}",
                format!("{mode:?}"),
                c.support,
                c.precision,
                c.recall
            );
        }
    }
    println!(
        "\ngenerator Bayes ceiling for reference: {:.4}",
        out.bayes_accuracy
    );
}
