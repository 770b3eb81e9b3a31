//! Evaluation: confusion-derived metrics, per-mode ROC/AUC, bootstrap error.
//!
//! Everything flows from the 5x5 confusion matrix and the probability
//! outputs: accuracy, balanced accuracy (mean per-class recall), weighted and
//! macro precision/recall/F1, one-vs-rest ROC curves with trapezoidal AUC,
//! and a bootstrap standard error for the accuracy.
//!
//! Run with: `cargo run --example evaluate_models`

use freightmode::eval::{auc_summary, bootstrap_se_accuracy, confusion, metrics, roc_curve};
use freightmode::features::{
    build_distance_table, derive_distances, derive_training_features_oob, fit_imputation,
    FeatureSchema, SchemaOptions,
};
use freightmode::learners::{argmax_mode, fit_learner, LearnerSpec, ProbVector};
use freightmode::model::{CategoryMaps, ModeLabel};
use freightmode::segmented::matrix;
use freightmode::split::{stratified_kfold, stratified_split};
use freightmode::synth::{generate, SynthConfig};
use std::path::PathBuf;

fn main() {
    let config = SynthConfig {
        n_records: 12_000,
        ..SynthConfig::default()
    };
    let out = generate(&config, 21).expect("generation succeeds");
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
    let schema = FeatureSchema::build(&train, SchemaOptions::default());
    let x = matrix(&train, &derived_train, &schema, &maps).expect("features");
    let xt = matrix(&test, &derived_test, &schema, &maps).expect("features");
    let y: Vec<ModeLabel> = train.iter().map(|r| r.mode).collect();
    let truths: Vec<ModeLabel> = test.iter().map(|r| r.mode).collect();

    let mut spec = LearnerSpec::from_name("rf").expect("known learner");
    if let LearnerSpec::Forest(params) = &mut spec {
        params.n_trees = 20;
        params.max_depth = Some(8);
    }
    let model = fit_learner(&spec, &x, &y, 3).expect("fit");
    let probs: Vec<ProbVector> = xt
        .iter()
        .map(|row| model.predict_proba(row).expect("predict"))
        .collect();
    let preds: Vec<ModeLabel> = probs.iter().map(argmax_mode).collect();

    let cm = confusion(&preds, &truths).expect("confusion");
    println!("confusion matrix (rows = truth, columns = predicted):");
    print!("{:<14}", "");
    for mode in ModeLabel::ALL {
        print!("{:>9}", format!("{mode:?}").chars().take(8).collect::<String>());
    }
    println!();
    for row in ModeLabel::ALL {
        print!("{:<14}", format!("{row:?}"));
        for col in ModeLabel::ALL {
            print!("{:>9}", cm.counts[row.index()][col.index()]);
        }
        println!();
    }

    let m = metrics(&cm).expect("metrics");
    println!("\naccuracy           {:.4}", m.accuracy);
    println!("balanced accuracy  {:.4}", m.balanced_accuracy);
    println!("weighted P/R/F1    {:.4} / {:.4} / {:.4}", m.precision_weighted, m.recall_weighted, m.f1_weighted);
    println!("macro    P/R/F1    {:.4} / {:.4} / {:.4}", m.precision_macro, m.recall_macro, m.f1_macro);

    let se = bootstrap_se_accuracy(&preds, &truths, 500, 99).expect("bootstrap");
    println!(
        "accuracy {:.4} +/- {:.4} (bootstrap SE over 500 resamples)",
        m.accuracy, se
    );

    let (per_mode, macro_auc) = auc_summary(&probs, &truths);
    println!("\none-vs-rest AUC:");
    for (mode, auc) in per_mode {
        match auc {
            Some(auc) => println!("  {:<14} {:.4}", format!("{mode:?}"), auc),
            None => println!("  {:<14} undefined (single-class)", format!("{mode:?}")),
        }
    }
    if let Some(auc) = macro_auc {
        println!("  macro mean     {auc:.4}");
    }

    let dir = PathBuf::from("runs/examples/evaluate_models");
    std::fs::create_dir_all(&dir).expect("create output dir");
    let curve = roc_curve(&probs, &truths, ModeLabel::Parcel).expect("roc");
    let path = dir.join("roc_parcel.csv");
    curve.write_csv(&path).expect("write roc");
    println!(
        "\nwrote the {}-point Parcel ROC curve to {}",
        curve.points.len(),
        path.display()
    );
}
