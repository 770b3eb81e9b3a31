//! Derive the leakage-safe per-mode distance features.
//!
//! A shipment's file carries the routed distance only for the mode that was
//! actually chosen — using it directly would leak the label. Instead, the
//! training split is aggregated into per-(origin, destination, mode) median
//! routed miles (M1..M5), with a per-mode regression on great-circle distance
//! imputing pairs never seen under a mode (flagged I1..I5). Training rows get
//! their features out-of-fold so no row's own routed distance reaches its own
//! features.
//!
//! Run with: `cargo run --example derived_distances`

use freightmode::features::{
    build_distance_table, derive_distances, derive_training_features_oob, fit_imputation,
};
use freightmode::model::ModeLabel;
use freightmode::split::{stratified_kfold, stratified_split};
use freightmode::synth::{generate, SynthConfig};

fn main() {
    let config = SynthConfig {
        n_records: 10_000,
        ..SynthConfig::default()
    };
    let out = generate(&config, 11).expect("generation succeeds");
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

    // The lookup table and imputation lines come from the training split only.
    let table = build_distance_table(&train);
    let imputation = fit_imputation(&train);
    println!(
        "distance table: {} (orig, dest, mode) cells from {} training records",
        table.len(),
        train.len()
    );
    for mode in ModeLabel::ALL {
        let line = imputation.line(mode);
        println!(
            "  imputation {:?}: routed ~ {:.1} + {:.3} * gc ({})",
            mode,
            line.intercept,
            line.slope,
            if line.fallback { "identity fallback" } else { "fit" }
        );
    }

    println!("\nfirst three test rows:");
    println!("{:<10} {:>8}  {}", "pair", "gc", "M1..M5 (imputed flags)");
    for record in test.iter().take(3) {
        let d = derive_distances(record, &table, &imputation);
        let miles: Vec<String> = ModeLabel::ALL
            .iter()
            .map(|m| {
                let flag = if d.imputed[m.index()] { "*" } else { "" };
                format!("{:.0}{flag}", d.miles[m.index()])
            })
            .collect();
        println!(
            "{:<10} {:>8.0}  [{}]",
            format!("{}->{}", record.orig_area, record.dest_area),
            record.gc_dist_mi,
            miles.join(", ")
        );
    }
    println!("(* = pair unseen under that mode in training; value imputed)");

    // Leakage check: the derivation never reads a test row's own routed
    // distance, so scrambling them across the test set changes nothing.
    let originals: Vec<_> = test
        .iter()
        .map(|r| derive_distances(r, &table, &imputation))
        .collect();
    let mut scrambled = test.clone();
    let n = scrambled.len();
    for i in 0..n {
        scrambled[i].routed_dist_mi = test[(i + 1) % n].routed_dist_mi;
    }
    let after: Vec<_> = scrambled
        .iter()
        .map(|r| derive_distances(r, &table, &imputation))
        .collect();
    assert_eq!(originals, after);
    println!(
        "\npermuting routed distances across all {n} test rows left every derived \
         feature unchanged"
    );

    // Training rows use complementary folds for the same reason.
    let folds = stratified_kfold(&train, 5, 2).expect("folds");
    let derived_train = derive_training_features_oob(&train, &folds);
    println!(
        "training features derived out-of-fold for {} rows over {} folds",
        derived_train.len(),
        folds.k
    );
}
