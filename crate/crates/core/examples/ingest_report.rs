//! Parse a shipment CSV with validation tallies.
//!
//! The ingest layer accepts the five analysis modes, counts rows whose mode
//! code aggregates to none of them (the survey's "mode 00" suppressed rows)
//! separately from rows with malformed fields, and either skips or aborts on
//! bad rows depending on strict mode.
//!
//! Run with: `cargo run --example ingest_report`

use freightmode::ingest::{parse_shipments, parse_shipments_path, IngestConfig};
use freightmode::model::CategoryMaps;
use freightmode::synth::{generate, SynthConfig};
use std::io::Write;
use std::path::PathBuf;

fn main() {
    // Start from a clean generated file.
    let config = SynthConfig {
        n_records: 5_000,
        ..SynthConfig::default()
    };
    let out = generate(&config, 7).expect("generation succeeds");
    let dir = PathBuf::from("runs/examples/ingest_report");
    std::fs::create_dir_all(&dir).expect("create output dir");
    out.write_all(&dir).expect("write CSVs");
    let path = dir.join("shipments.csv");

    // Damage it the way survey extracts are damaged: a suppressed mode code,
    // a zero weight, and a truncated line.
    let mut file = std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .expect("open for append");
    writeln!(file, "X0000001,A1,A2,323,05,00,540.0,80.0,120.0,130.0,N,N,N").unwrap();
    writeln!(file, "X0000002,A1,A2,323,05,04,540.0,0.0,120.0,130.0,N,N,N").unwrap();
    writeln!(file, "X0000003,A1,A2").unwrap();
    drop(file);

    let maps = CategoryMaps::with_default_groups(out.area_types.clone());
    let ingest = IngestConfig::default();
    let (records, report) = parse_shipments_path(&path, &ingest, &maps).expect("parse");

    println!("parsed {}", path.display());
    println!("  total rows:            {}", report.total_rows);
    println!("  accepted:              {}", report.accepted);
    println!(
        "  rejected, unmatched mode: {} ({:.2}% of rows)",
        report.rejected_unmatched_mode,
        100.0 * report.rejected_unmatched_mode as f64 / report.total_rows as f64
    );
    println!("  rejected, invalid field:  {}", report.rejected_invalid_field);
    for (column, count) in &report.column_errors {
        println!("    {column}: {count}");
    }
    assert!(report.is_balanced(), "tallies cover every row exactly once");
    assert_eq!(records.len() as u64, report.accepted);
    println!("  tallies balance: accepted + rejected == total");

    // Strict mode turns the first bad row into a hard error instead.
    let strict = IngestConfig {
        strict: true,
        ..IngestConfig::default()
    };
    let text = std::fs::read_to_string(&path).unwrap();
    match parse_shipments(text.as_bytes(), &strict, &maps) {
        Err(err) => println!("\nstrict mode aborts: {err}"),
        Ok(_) => unreachable!("strict parse must fail on the damaged file"),
    }
}
