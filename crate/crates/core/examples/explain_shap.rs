//! TreeSHAP attributions: global summary, single-record force data, and an
//! exactness check against brute-force Shapley values.
//!
//! The polynomial-time path algorithm produces the same numbers as the
//! exponential subset enumeration, so on small random trees the two must
//! agree to floating-point precision. On a fitted forest the per-record
//! attributions must add up to the predicted probabilities exactly.
//!
//! Run with: `cargo run --example explain_shap`

use freightmode::explain::{
    brute_force_shapley, build_shap_report, force_data, random_shap_tree, shap_summary, tree_shap,
    write_force_json, write_summary_csv,
};
use freightmode::features::{
    build_distance_table, derive_distances, fit_imputation, FeatureSchema, SchemaOptions,
};
use freightmode::learners::{fit_learner, LearnerSpec};
use freightmode::model::{CategoryMaps, ModeLabel};
use freightmode::rng::rng_for;
use freightmode::segmented::matrix;
use freightmode::split::stratified_split;
use freightmode::synth::{generate, SynthConfig};
use rand::Rng;
use std::collections::BTreeMap;
use std::path::PathBuf;

fn main() {
    // Exactness oracle first: path-dependent TreeSHAP versus subset
    // enumeration on random trees of varying shape.
    let mut worst = 0.0f64;
    for t in 0..30u64 {
        let tree = random_shap_tree(2 + (t % 7) as usize, 1 + (t % 4) as u32, 1 + (t % 3) as usize, t);
        let mut rng = rng_for(t, "example-shap-input", 0);
        for _ in 0..10 {
            let x: Vec<f64> = (0..tree.n_features).map(|_| rng.gen_range(-64.0..64.0)).collect();
            let fast = tree_shap(&tree, &x);
            let slow = brute_force_shapley(&tree, &x).expect("few features");
            for (a, b) in fast.phi.iter().flatten().zip(slow.phi.iter().flatten()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    println!("TreeSHAP vs brute-force Shapley, 30 random trees x 10 inputs:");
    println!("  max |difference| = {worst:.3e}\n");
    assert!(worst < 1e-9, "path algorithm must match enumeration");

    // Now a fitted forest on synthetic shipments.
    let config = SynthConfig {
        n_records: 8_000,
        ..SynthConfig::default()
    };
    let out = generate(&config, 13).expect("generation succeeds");
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

    let table = build_distance_table(&train);
    let imputation = fit_imputation(&train);
    // In-sample derivation is fine here; the example is about attribution.
    let derived_train: Vec<_> = train
        .iter()
        .map(|r| derive_distances(r, &table, &imputation))
        .collect();
    let derived_test: Vec<_> = test
        .iter()
        .map(|r| derive_distances(r, &table, &imputation))
        .collect();
    let schema = FeatureSchema::build(&train, SchemaOptions::default());
    let x = matrix(&train, &derived_train, &schema, &maps).expect("features");
    let y: Vec<ModeLabel> = train.iter().map(|r| r.mode).collect();

    let mut spec = LearnerSpec::from_name("rf").expect("known learner");
    if let LearnerSpec::Forest(params) = &mut spec {
        params.n_trees = 12;
        params.max_depth = Some(7);
    }
    let model = fit_learner(&spec, &x, &y, 3).expect("fit");

    let sample: Vec<_> = test.iter().take(200).cloned().collect();
    let xt = matrix(
        &sample,
        &derived_test[..sample.len()],
        &schema,
        &maps,
    )
    .expect("features");
    let ids: Vec<String> = sample.iter().map(|r| r.id.clone()).collect();
    let names: Vec<String> = schema.feature_names().iter().map(|s| s.to_string()).collect();
    let report = build_shap_report(&model, &xt, &ids, &names).expect("shap");

    // Attributions plus base must reconstruct the model output exactly.
    let mut worst_local = 0.0f64;
    for (i, row) in xt.iter().enumerate() {
        let probs = model.predict_proba(row).expect("predict");
        let mut recon = report.base.clone();
        for phi_f in &report.phi[i] {
            for (o, p) in recon.iter_mut().zip(phi_f) {
                *o += p;
            }
        }
        for (r, p) in recon.iter().zip(probs.iter()) {
            worst_local = worst_local.max((r - p).abs());
        }
    }
    println!("local accuracy over {} records: max |sum(phi)+base - p| = {worst_local:.3e}", xt.len());
    assert!(worst_local < 1e-6, "attributions must sum to the prediction");

    // Global summary: total mean |phi| per feature across all classes.
    let rows = shap_summary(&report);
    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    for row in &rows {
        *totals.entry(row.feature.as_str()).or_insert(0.0) += row.mean_abs_phi;
    }
    let mut ranked: Vec<_> = totals.into_iter().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite"));
    println!("\ntop 10 features by total mean |phi| across classes:");
    for (name, total) in ranked.iter().take(10) {
        println!("  {name:<22} {total:.4}");
    }

    // Force breakdown for one record: which features pushed its winning
    // class away from the base rate.
    let force = force_data(&report, &xt, 0).expect("record 0");
    let winner = force
        .output
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
        .map(|(i, _)| i)
        .expect("nonempty");
    let mode = ModeLabel::ALL[winner];
    let mut pushes: Vec<(&str, f64)> = force
        .features
        .iter()
        .map(|f| (f.name.as_str(), f.phi[winner]))
        .collect();
    pushes.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).expect("finite"));
    println!(
        "\nrecord {} predicted {mode:?}: base {:.4} -> output {:.4}",
        force.id, force.base[winner], force.output[winner]
    );
    for (name, phi) in pushes.iter().take(6) {
        println!("  {name:<22} {phi:+.4}");
    }

    let dir = PathBuf::from("runs/examples/explain_shap");
    std::fs::create_dir_all(&dir).expect("create output dir");
    write_summary_csv(&report, &dir.join("shap_summary.csv")).expect("write summary");
    write_force_json(&force, &dir.join("force_record0.json")).expect("write force");
    println!("\nwrote shap_summary.csv and force_record0.json under {}", dir.display());
}
