//! Thin command-line front end over the staged pipeline.
//!
//! All behavior lives in the library; this binary parses arguments, applies
//! the documented overrides, runs the requested stage, and prints summaries.

use clap::{Parser, Subcommand};
use freightmode::pipeline::{
    load_ingest_report, load_metrics, run_evaluate, run_explain, run_featurize, run_ingest,
    run_report, run_split, run_synth, run_train, PipelineError, ReportDocument, RunConfig,
    Scenario,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "freightmode",
    version,
    about = "Freight mode-choice modeling over shipment microdata"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the configured rayon thread count (0 = library default).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Abort ingest on the first invalid row.
    #[arg(long)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shipment file with a known answer sheet.
    Synth,
    /// Parse and validate the input CSV into canonical records.
    Ingest,
    /// Stratified train/test split plus train-set folds.
    Split,
    /// Distance tables, imputation, derived distances, and the schema.
    Featurize,
    /// Fit the configured global, per-category, and stacked models.
    Train,
    /// Score every trained model on the held-out test set.
    Evaluate,
    /// Per-feature attributions for the configured model.
    Explain,
    /// Fit-and-compare panels across scope and feature variants.
    Report {
        /// Panels to compute: letters a-g, comma-separated, or "all".
        #[arg(long, default_value = "all", value_name = "a..g")]
        scenario: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    if cli.strict {
        config.strict = true;
    }
    config.validate()?;
    if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    }

    match cli.command {
        Command::Synth => {
            let manifest = run_synth(&config)?;
            println!("synth: wrote {} artifacts", manifest.outputs.len());
        }
        Command::Ingest => {
            run_ingest(&config)?;
            let report = load_ingest_report(&config)?;
            println!(
                "ingest: {} rows, {} accepted, {} unmatched mode, {} invalid",
                report.total_rows,
                report.accepted,
                report.rejected_unmatched_mode,
                report.rejected_invalid_field
            );
        }
        Command::Split => {
            let manifest = run_split(&config)?;
            println!("split: wrote {}", manifest.outputs.join(", "));
        }
        Command::Featurize => {
            let manifest = run_featurize(&config)?;
            println!("featurize: wrote {}", manifest.outputs.join(", "));
        }
        Command::Train => {
            let manifest = run_train(&config)?;
            println!("train: wrote {} model artifacts", manifest.outputs.len());
            for output in &manifest.outputs {
                println!("  {output}");
            }
        }
        Command::Evaluate => {
            run_evaluate(&config)?;
            let document = load_metrics(&config)?;
            println!("evaluate: {} test records", document.n_test);
            println!(
                "{:<16} {:>9} {:>9} {:>9} {:>9}",
                "model", "accuracy", "bal.acc", "f1(w)", "auc"
            );
            for row in &document.rows {
                println!(
                    "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>9}",
                    row.model,
                    row.metrics.accuracy,
                    row.metrics.balanced_accuracy,
                    row.metrics.f1_weighted,
                    row.auc_macro
                        .map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}")),
                );
            }
        }
        Command::Explain => {
            let manifest = run_explain(&config)?;
            println!("explain: wrote {}", manifest.outputs.join(", "));
        }
        Command::Report { scenario } => {
            let scenarios = Scenario::parse_list(&scenario)?;
            let document = run_report(&config, &scenarios)?;
            print_report(&document);
        }
    }
    Ok(())
}

fn print_report(document: &ReportDocument) {
    println!(
        "report: {} train / {} test records",
        document.n_train, document.n_test
    );
    if let Some(bayes) = document.bayes_accuracy {
        println!("known generator ceiling: {bayes:.4}");
    }
    for panel in &document.panels {
        println!("\n({}) {}", panel.letter, panel.title);
        println!(
            "  {:<28} {:>9} {:>9} {:>9}",
            "model", "accuracy", "bal.acc", "f1(w)"
        );
        for row in &panel.rows {
            println!(
                "  {:<28} {:>9.4} {:>9.4} {:>9.4}",
                row.model,
                row.metrics.accuracy,
                row.metrics.balanced_accuracy,
                row.metrics.f1_weighted
            );
        }
    }
    if !document.ablation.is_empty() {
        println!("\neffect of each design axis (best-accuracy deltas):");
        for row in &document.ablation {
            println!(
                "  {:<32} {:<24} {:+.4}",
                row.countermeasure, row.comparison, row.delta_accuracy
            );
        }
    }
}
