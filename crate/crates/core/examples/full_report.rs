//! End-to-end pipeline driven from code: configure, run every stage, and
//! print the comparison report.
//!
//! The same `RunConfig` that the command-line front end reads from TOML can
//! be built directly. `run_all` executes synth -> ingest -> split ->
//! featurize -> train -> evaluate -> explain -> report, skipping stages whose
//! artifacts are already current for this configuration, and returns the
//! report document: seven panels crossing unified/local models with and
//! without the derived distance block, plus one ensemble panel, plus the
//! ablation lines summarizing each design axis.
//!
//! Run with: `cargo run --example full_report`

use freightmode::pipeline::{
    run_all, EvaluationSection, ExplainSection, FeatureSection, PathsSection, ReportSection,
    RunConfig, Scenario, SplitSection, StackingSection, TrainSection,
};
use freightmode::synth::SynthConfig;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn main() {
    let out_dir = PathBuf::from("runs/examples/full_report");
    let config = RunConfig {
        seed: 3,
        threads: 0,
        strict: false,
        paths: PathsSection {
            input_csv: None,
            areas_csv: None,
            output_dir: out_dir.clone(),
        },
        synth: Some(SynthConfig {
            n_records: 4_000,
            ..SynthConfig::default()
        }),
        split: SplitSection {
            test_fraction: 0.2,
            k_folds: 3,
        },
        features: FeatureSection::default(),
        train: TrainSection {
            global: vec!["mnl".into(), "dt".into(), "nb".into(), "rf".into()],
            segmented: vec!["rf".into()],
            min_segment_samples: 50,
            forest_trees: Some(10),
            boost_rounds: Some(10),
            tree_depth: Some(7),
        },
        stacking: StackingSection {
            roster: vec!["rf:global".into(), "rf:sctg".into()],
            passthrough: None,
            meta_rounds: 15,
            meta_depth: 3,
            meta_learning_rate: 0.2,
            meta_feature_subsample: Some(8),
        },
        evaluation: EvaluationSection {
            bootstrap: true,
            bootstrap_resamples: 200,
            roc: true,
            vote_types: Vec::new(),
        },
        explain: ExplainSection {
            shap_sample: 30,
            model: "rf".into(),
        },
        report: ReportSection {
            learners: vec!["mnl".into(), "dt".into(), "nb".into(), "rf".into()],
        },
    };

    let started = Instant::now();
    let report = run_all(&config, &Scenario::ALL).expect("pipeline");
    println!(
        "all stages finished in {:.1}s ({} train / {} test records, config {})\n",
        started.elapsed().as_secs_f64(),
        report.n_train,
        report.n_test,
        &report.config_hash[..12]
    );
    if let Some(bayes) = report.bayes_accuracy {
        println!("Bayes-optimal ceiling on this generated data: {bayes:.4}\n");
    }

    for panel in &report.panels {
        println!("({}) {}", panel.letter, panel.title);
        for row in &panel.rows {
            println!(
                "    {:<12} accuracy {:.4}   balanced {:.4}   F1w {:.4}",
                row.model, row.metrics.accuracy, row.metrics.balanced_accuracy, row.metrics.f1_weighted
            );
        }
    }

    println!("\nablation (best treated panel minus best control panel):");
    for row in &report.ablation {
        println!(
            "  {:<22} {:<12} {:+.4}",
            row.countermeasure, row.comparison, row.delta_accuracy
        );
    }

    println!("\nartifacts under {}:", out_dir.display());
    let mut paths = Vec::new();
    collect(&out_dir, &out_dir, &mut paths);
    paths.sort();
    // Group bulky per-mode/per-model file sets by directory.
    let mut by_dir: Vec<(String, Vec<String>)> = Vec::new();
    for p in paths {
        let (dir, file) = match p.rsplit_once('/') {
            Some((d, f)) => (d.to_string(), f.to_string()),
            None => (".".to_string(), p),
        };
        match by_dir.last_mut() {
            Some((d, files)) if *d == dir => files.push(file),
            _ => by_dir.push((dir, vec![file])),
        }
    }
    for (dir, files) in by_dir {
        if files.len() > 4 {
            println!("  {dir}/ ({} files, e.g. {})", files.len(), files[0]);
        } else {
            for f in files {
                println!("  {dir}/{f}");
            }
        }
    }
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<String>) {
    for entry in std::fs::read_dir(dir).expect("readable dir") {
        let path = entry.expect("dir entry").path();
        if path.is_dir() {
            collect(root, &path, out);
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.display().to_string());
        }
    }
}
