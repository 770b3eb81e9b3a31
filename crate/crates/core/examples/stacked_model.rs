//! Two-level stacking with out-of-fold meta-features and a leakage audit.
//!
//! Level 1 is a roster of families (global forests, extra-trees, segmented
//! forests). Each training row's meta-features are the probability outputs
//! of models trained *without* that row's fold; the level-2 boosted learner
//! is fit on those plus a numeric passthrough block. An audit records, for
//! every meta cell, whether the producing model saw the row's fold — any
//! violation would be target leakage.
//!
//! Run with: `cargo run --example stacked_model`

use freightmode::ensemble::{
    default_passthrough, fit_stacker, predict_stacked, vote_average, ModelScope, RosterEntry,
    StackerConfig,
};
use freightmode::features::{
    build_distance_table, derive_distances, derive_training_features_oob, fit_imputation,
    SchemaOptions,
};
use freightmode::learners::{
    argmax_mode, BoostedParams, FeatureSubsample, ForestParams, ForestVariant, LearnerSpec,
    ProbVector,
};
use freightmode::model::{CategoryMaps, ModeLabel};
use freightmode::pipeline::persist::{load_model, save_model, AnyModel};
use freightmode::split::{stratified_kfold, stratified_split};
use freightmode::synth::{generate, SynthConfig};
use std::path::PathBuf;

fn main() {
    let config = SynthConfig {
        n_records: 12_000,
        ..SynthConfig::default()
    };
    let out = generate(&config, 9).expect("generation succeeds");
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
    let folds = stratified_kfold(&train, 3, 2).expect("folds");

    let table = build_distance_table(&train);
    let imputation = fit_imputation(&train);
    let derived_train = derive_training_features_oob(&train, &folds);
    let derived_test: Vec<_> = test
        .iter()
        .map(|r| derive_distances(r, &table, &imputation))
        .collect();
    let truths: Vec<ModeLabel> = test.iter().map(|r| r.mode).collect();

    let forest = |variant: ForestVariant, bootstrap: bool| {
        LearnerSpec::Forest(ForestParams {
            variant,
            n_trees: 15,
            max_depth: Some(8),
            min_leaf: 5,
            min_gain: 0.0,
            feature_subsample: FeatureSubsample::Sqrt,
            bootstrap,
        })
    };
    let stack_config = StackerConfig {
        roster: vec![
            RosterEntry::new(forest(ForestVariant::RandomForest, true), ModelScope::Global),
            RosterEntry::new(forest(ForestVariant::ExtraTrees, false), ModelScope::Global),
            RosterEntry::new(forest(ForestVariant::RandomForest, true), ModelScope::Sctg),
        ],
        passthrough: default_passthrough(),
        k: 3,
        meta: BoostedParams {
            n_rounds: 20,
            learning_rate: 0.2,
            max_depth: 3,
            feature_subsample: Some(8),
            ..BoostedParams::default()
        },
        min_samples: 50,
        schema_options: SchemaOptions::default(),
    };

    let (stack, audit) = fit_stacker(&train, &derived_train, &maps, &stack_config, &folds, 17)
        .expect("stack fit");
    println!(
        "stack: {} level-1 families, meta sees {} features ({} member probabilities + {} passthrough)",
        stack.members.len(),
        stack.meta_width(),
        stack.members.len() * 5,
        stack.passthrough.len()
    );
    println!(
        "out-of-fold audit: {} meta-cell checks, {} violations",
        audit.checks, audit.violations
    );
    assert_eq!(audit.violations, 0);

    // Compare members, their vote, and the stack on held-out data.
    let accuracy = |probs: &[ProbVector]| {
        probs
            .iter()
            .zip(&truths)
            .filter(|(p, t)| argmax_mode(p) == **t)
            .count() as f64
            / truths.len() as f64
    };
    let member_probs: Vec<Vec<ProbVector>> = stack
        .members
        .iter()
        .map(|member| {
            test.iter()
                .zip(&derived_test)
                .map(|(r, d)| member.predict(r, d, &stack.global_schema, &maps).unwrap())
                .collect()
        })
        .collect();
    for (member, probs) in stack.members.iter().zip(&member_probs) {
        println!("  member {:<12} accuracy {:.4}", member.tag, accuracy(probs));
    }
    let voted: Vec<ProbVector> = (0..test.len())
        .map(|i| vote_average(&member_probs.iter().map(|p| p[i]).collect::<Vec<_>>()))
        .collect();
    println!("  vote         accuracy {:.4}", accuracy(&voted));
    let stacked: Vec<ProbVector> = test
        .iter()
        .zip(&derived_test)
        .map(|(r, d)| predict_stacked(&stack, r, d, &maps).unwrap())
        .collect();
    println!("  stack        accuracy {:.4}", accuracy(&stacked));

    // Stacks persist like any model and round-trip bit-exactly.
    let dir = PathBuf::from("runs/examples/stacked_model");
    std::fs::create_dir_all(&dir).expect("create output dir");
    let path = dir.join("stack.model.json");
    save_model(
        &path,
        &AnyModel::Stacked {
            name: "stack".to_string(),
            stack: stack.clone(),
        },
        None,
    )
    .expect("save");
    let loaded = load_model(&path).expect("load");
    match loaded.model {
        AnyModel::Stacked { stack: reloaded, .. } => assert_eq!(reloaded, stack),
        _ => unreachable!("saved a stack"),
    }
    println!("\nsaved and reloaded bit-exactly: {}", path.display());
}
