//! CSV ingestion: parse PUF-schema shipment files into validated
//! [`ShipmentRecord`]s.
//!
//! Two kinds of rows never become records:
//!
//! * rows whose mode code is outside the 14-code aggregation table (the PUF
//!   uses such codes for suppressed/aggregated rows) are counted as
//!   `rejected_unmatched_mode`;
//! * rows with an unparsable or invariant-violating field are counted as
//!   `rejected_invalid_field` (or abort the run in strict mode).
//!
//! Column names and hazmat value tokens are remappable so files that follow
//! different coding conventions can be ingested without preprocessing.

use crate::model::{aggregate_mode, CategoryMaps, Hazmat, ShipmentRecord};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

/// Logical field → CSV column-name mapping.
///
/// Defaults are the 2017 CFS PUF column names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub id: String,
    pub orig_area: String,
    pub dest_area: String,
    pub naics: String,
    pub sctg: String,
    pub mode: String,
    pub value: String,
    pub weight: String,
    pub gc_dist: String,
    pub routed_dist: String,
    pub temp_cntl: String,
    pub export: String,
    pub hazmat: String,
}

impl Default for ColumnMap {
    fn default() -> ColumnMap {
        ColumnMap {
            id: "SHIPMT_ID".to_string(),
            orig_area: "ORIG_CFS_AREA".to_string(),
            dest_area: "DEST_CFS_AREA".to_string(),
            naics: "NAICS".to_string(),
            sctg: "SCTG".to_string(),
            mode: "MODE".to_string(),
            value: "SHIPMT_VALUE".to_string(),
            weight: "SHIPMT_WGHT".to_string(),
            gc_dist: "SHIPMT_DIST_GC".to_string(),
            routed_dist: "SHIPMT_DIST_ROUTED".to_string(),
            temp_cntl: "TEMP_CNTL_YN".to_string(),
            export: "EXPORT_YN".to_string(),
            hazmat: "HAZMAT".to_string(),
        }
    }
}

/// Value tokens accepted in the hazmat column.
///
/// Defaults to `C` / `O` / `N` (class-3, other hazard, not hazardous). Files
/// using a different convention remap these; any other token is a field
/// error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HazmatTokens {
    pub class3: String,
    pub other_haz: String,
    pub not_haz: String,
}

impl Default for HazmatTokens {
    fn default() -> HazmatTokens {
        HazmatTokens {
            class3: "C".to_string(),
            other_haz: "O".to_string(),
            not_haz: "N".to_string(),
        }
    }
}

impl HazmatTokens {
    /// Maps a raw token onto a hazmat class, if it is one of the three.
    pub fn parse(&self, token: &str) -> Option<Hazmat> {
        let token = token.trim();
        if token == self.class3 {
            Some(Hazmat::Class3)
        } else if token == self.other_haz {
            Some(Hazmat::OtherHaz)
        } else if token == self.not_haz {
            Some(Hazmat::NotHaz)
        } else {
            None
        }
    }

    /// The three tokens must be distinct to be decodable.
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.class3 == self.other_haz
            || self.class3 == self.not_haz
            || self.other_haz == self.not_haz
        {
            return Err(IngestError::BadConfig(format!(
                "hazmat tokens must be distinct, got {:?}/{:?}/{:?}",
                self.class3, self.other_haz, self.not_haz
            )));
        }
        Ok(())
    }
}

/// Ingestion options: column names, hazmat tokens, and strictness.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub columns: ColumnMap,
    pub hazmat_tokens: HazmatTokens,
    /// In strict mode the first invalid row aborts the parse instead of being
    /// tallied.
    pub strict: bool,
}

/// Tallies from one parse pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub total_rows: u64,
    pub accepted: u64,
    pub rejected_unmatched_mode: u64,
    pub rejected_invalid_field: u64,
    /// Invalid-field tallies keyed by offending column name. Rows the CSV
    /// layer itself could not decode are tallied under `"<row>"`.
    pub column_errors: BTreeMap<String, u64>,
}

impl IngestReport {
    /// `total_rows = accepted + rejected_unmatched_mode + rejected_invalid_field`.
    pub fn is_balanced(&self) -> bool {
        self.total_rows
            == self.accepted + self.rejected_unmatched_mode + self.rejected_invalid_field
    }
}

/// A single row's validation failure, naming the offending column and value.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("column {column}: invalid value {value:?}: {message}")]
pub struct FieldError {
    pub column: String,
    pub value: String,
    pub message: String,
}

/// Errors that abort a parse.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("header is missing mapped column(s): {0:?}")]
    SchemaError(Vec<String>),
    #[error("row {row}: {source}")]
    StrictRow {
        row: u64,
        #[source]
        source: FieldError,
    },
    #[error("row {row}: malformed CSV: {message}")]
    StrictMalformed { row: u64, message: String },
    #[error("bad ingest config: {0}")]
    BadConfig(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Outcome of validating one row.
#[derive(Debug, Clone, PartialEq)]
pub enum RowOutcome {
    /// The row satisfies every invariant and maps to a known mode.
    Record(ShipmentRecord),
    /// All fields are valid but the mode code is outside the aggregation
    /// table; the row is excluded from modeling by design.
    UnmatchedMode { code: String },
}

/// Header-resolved column indices.
#[derive(Debug, Clone)]
pub struct ResolvedColumns {
    id: usize,
    orig_area: usize,
    dest_area: usize,
    naics: usize,
    sctg: usize,
    mode: usize,
    value: usize,
    weight: usize,
    gc_dist: usize,
    routed_dist: usize,
    temp_cntl: usize,
    export: usize,
    hazmat: usize,
    /// Column names in the same order, for error messages.
    names: ColumnMap,
}

impl ResolvedColumns {
    /// Locates every mapped column in the header, collecting all misses into
    /// one `SchemaError`.
    pub fn resolve(header: &csv::StringRecord, columns: &ColumnMap) -> Result<ResolvedColumns, IngestError> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let wanted = [
            &columns.id,
            &columns.orig_area,
            &columns.dest_area,
            &columns.naics,
            &columns.sctg,
            &columns.mode,
            &columns.value,
            &columns.weight,
            &columns.gc_dist,
            &columns.routed_dist,
            &columns.temp_cntl,
            &columns.export,
            &columns.hazmat,
        ];
        let mut missing = Vec::new();
        let mut idx = [0usize; 13];
        for (slot, name) in idx.iter_mut().zip(wanted) {
            match find(name) {
                Some(i) => *slot = i,
                None => missing.push(name.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(IngestError::SchemaError(missing));
        }
        Ok(ResolvedColumns {
            id: idx[0],
            orig_area: idx[1],
            dest_area: idx[2],
            naics: idx[3],
            sctg: idx[4],
            mode: idx[5],
            value: idx[6],
            weight: idx[7],
            gc_dist: idx[8],
            routed_dist: idx[9],
            temp_cntl: idx[10],
            export: idx[11],
            hazmat: idx[12],
            names: columns.clone(),
        })
    }
}

fn field<'a>(row: &'a csv::StringRecord, idx: usize, column: &str) -> Result<&'a str, FieldError> {
    row.get(idx).map(str::trim).ok_or_else(|| FieldError {
        column: column.to_string(),
        value: String::new(),
        message: "column missing from row".to_string(),
    })
}

fn parse_nonneg_real(raw: &str, column: &str) -> Result<f64, FieldError> {
    let err = |message: &str| FieldError {
        column: column.to_string(),
        value: raw.to_string(),
        message: message.to_string(),
    };
    let v: f64 = raw.parse().map_err(|_| err("not a number"))?;
    if !v.is_finite() {
        return Err(err("not finite"));
    }
    if v < 0.0 {
        return Err(err("must be ≥ 0"));
    }
    Ok(v)
}

fn parse_flag(raw: &str, column: &str) -> Result<bool, FieldError> {
    match raw {
        "Y" | "y" => Ok(true),
        "N" | "n" => Ok(false),
        _ => Err(FieldError {
            column: column.to_string(),
            value: raw.to_string(),
            message: "expected Y or N".to_string(),
        }),
    }
}

/// Validates one raw row against all record invariants.
///
/// Field checks run in column order and the first failure is reported. A row
/// whose only "problem" is an unmapped mode code is not a failure — it
/// returns [`RowOutcome::UnmatchedMode`].
pub fn validate_record(
    row: &csv::StringRecord,
    cols: &ResolvedColumns,
    config: &IngestConfig,
    maps: &CategoryMaps,
) -> Result<RowOutcome, FieldError> {
    let names = &cols.names;

    let id = field(row, cols.id, &names.id)?;
    if id.is_empty() {
        return Err(FieldError {
            column: names.id.clone(),
            value: String::new(),
            message: "shipment id must be nonempty".to_string(),
        });
    }

    let orig_area = field(row, cols.orig_area, &names.orig_area)?;
    if orig_area.is_empty() {
        return Err(FieldError {
            column: names.orig_area.clone(),
            value: String::new(),
            message: "origin area must be nonempty".to_string(),
        });
    }
    let dest_area = field(row, cols.dest_area, &names.dest_area)?;
    if dest_area.is_empty() {
        return Err(FieldError {
            column: names.dest_area.clone(),
            value: String::new(),
            message: "destination area must be nonempty".to_string(),
        });
    }

    let naics = field(row, cols.naics, &names.naics)?;
    if naics.is_empty() {
        return Err(FieldError {
            column: names.naics.clone(),
            value: String::new(),
            message: "NAICS must be nonempty".to_string(),
        });
    }

    let sctg = field(row, cols.sctg, &names.sctg)?;
    let sctg_group = maps.sctg_group(sctg).map_err(|_| FieldError {
        column: names.sctg.clone(),
        value: sctg.to_string(),
        message: "SCTG code not present in the group table".to_string(),
    })?;

    let value_raw = field(row, cols.value, &names.value)?;
    let value_usd = parse_nonneg_real(value_raw, &names.value)?;

    let weight_raw = field(row, cols.weight, &names.weight)?;
    let weight_lb = parse_nonneg_real(weight_raw, &names.weight)?;
    if weight_lb == 0.0 {
        return Err(FieldError {
            column: names.weight.clone(),
            value: weight_raw.to_string(),
            message: "weight must be > 0".to_string(),
        });
    }

    let gc_raw = field(row, cols.gc_dist, &names.gc_dist)?;
    let gc_dist_mi = parse_nonneg_real(gc_raw, &names.gc_dist)?;

    let routed_raw = field(row, cols.routed_dist, &names.routed_dist)?;
    let routed_dist_mi = parse_nonneg_real(routed_raw, &names.routed_dist)?;

    let temp_raw = field(row, cols.temp_cntl, &names.temp_cntl)?;
    let temp_controlled = parse_flag(temp_raw, &names.temp_cntl)?;

    let export_raw = field(row, cols.export, &names.export)?;
    let export_flag = parse_flag(export_raw, &names.export)?;

    let hazmat_raw = field(row, cols.hazmat, &names.hazmat)?;
    let hazmat = config.hazmat_tokens.parse(hazmat_raw).ok_or_else(|| FieldError {
        column: names.hazmat.clone(),
        value: hazmat_raw.to_string(),
        message: format!(
            "expected one of {:?}, {:?}, {:?}",
            config.hazmat_tokens.class3,
            config.hazmat_tokens.other_haz,
            config.hazmat_tokens.not_haz
        ),
    })?;

    let mode_raw = field(row, cols.mode, &names.mode)?;
    let mode = match aggregate_mode(mode_raw) {
        Some(mode) => mode,
        None => {
            return Ok(RowOutcome::UnmatchedMode {
                code: mode_raw.to_string(),
            })
        }
    };

    Ok(RowOutcome::Record(ShipmentRecord {
        id: id.to_string(),
        weight_lb,
        value_usd,
        sctg: sctg.to_string(),
        sctg_group: sctg_group.to_string(),
        naics: naics.to_string(),
        orig_area: orig_area.to_string(),
        dest_area: dest_area.to_string(),
        gc_dist_mi,
        routed_dist_mi,
        hazmat,
        temp_controlled,
        export_flag,
        mode,
    }))
}

/// Parses a shipment CSV stream into records plus an ingest report.
///
/// Row order is preserved. In non-strict mode bad rows are tallied and
/// skipped; in strict mode the first bad row aborts.
pub fn parse_shipments<R: Read>(
    reader: R,
    config: &IngestConfig,
    maps: &CategoryMaps,
) -> Result<(Vec<ShipmentRecord>, IngestReport), IngestError> {
    config.hazmat_tokens.validate()?;
    let mut csv_reader = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = csv_reader
        .headers()
        .map_err(|e| IngestError::SchemaError(vec![format!("unreadable header: {e}")]))?
        .clone();
    let cols = ResolvedColumns::resolve(&header, &config.columns)?;

    let mut records = Vec::new();
    let mut report = IngestReport::default();
    for (i, row) in csv_reader.records().enumerate() {
        let row_number = i as u64 + 2; // 1-based, after the header line
        report.total_rows += 1;
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                if config.strict {
                    return Err(IngestError::StrictMalformed {
                        row: row_number,
                        message: e.to_string(),
                    });
                }
                report.rejected_invalid_field += 1;
                *report.column_errors.entry("<row>".to_string()).or_insert(0) += 1;
                continue;
            }
        };
        match validate_record(&row, &cols, config, maps) {
            Ok(RowOutcome::Record(record)) => {
                report.accepted += 1;
                records.push(record);
            }
            Ok(RowOutcome::UnmatchedMode { .. }) => {
                report.rejected_unmatched_mode += 1;
            }
            Err(err) => {
                if config.strict {
                    return Err(IngestError::StrictRow {
                        row: row_number,
                        source: err,
                    });
                }
                report.rejected_invalid_field += 1;
                *report.column_errors.entry(err.column.clone()).or_insert(0) += 1;
            }
        }
    }
    debug_assert!(report.is_balanced());
    Ok((records, report))
}

/// [`parse_shipments`] over a file path.
pub fn parse_shipments_path(
    path: &Path,
    config: &IngestConfig,
    maps: &CategoryMaps,
) -> Result<(Vec<ShipmentRecord>, IngestReport), IngestError> {
    let file = std::fs::File::open(path)
        .map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
    parse_shipments(std::io::BufReader::new(file), config, maps)
}

/// Writes accepted records back out in the default PUF column layout.
///
/// Useful for exporting synthetic data and for round-trip checks; parsing the
/// output with the same config yields the identical records.
pub fn write_shipments_csv(
    path: &Path,
    records: &[ShipmentRecord],
    config: &IngestConfig,
) -> Result<(), IngestError> {
    let tokens = &config.hazmat_tokens;
    let cols = &config.columns;
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
    writer
        .write_record([
            cols.id.as_str(),
            cols.orig_area.as_str(),
            cols.dest_area.as_str(),
            cols.naics.as_str(),
            cols.sctg.as_str(),
            cols.mode.as_str(),
            cols.value.as_str(),
            cols.weight.as_str(),
            cols.gc_dist.as_str(),
            cols.routed_dist.as_str(),
            cols.temp_cntl.as_str(),
            cols.export.as_str(),
            cols.hazmat.as_str(),
        ])
        .map_err(|e| IngestError::Io(e.to_string()))?;
    for r in records {
        // Any detailed code that aggregates onto the record's mode works for
        // round-tripping; use the canonical single-mode codes.
        let mode_code = match r.mode {
            crate::model::ModeLabel::ForHireTruck => "04",
            crate::model::ModeLabel::PrivateTruck => "05",
            crate::model::ModeLabel::Parcel => "14",
            crate::model::ModeLabel::Air => "11",
            crate::model::ModeLabel::Other => "06",
        };
        let hazmat = match r.hazmat {
            Hazmat::Class3 => tokens.class3.as_str(),
            Hazmat::OtherHaz => tokens.other_haz.as_str(),
            Hazmat::NotHaz => tokens.not_haz.as_str(),
        };
        writer
            .write_record([
                r.id.as_str(),
                r.orig_area.as_str(),
                r.dest_area.as_str(),
                r.naics.as_str(),
                r.sctg.as_str(),
                mode_code,
                &format!("{}", r.value_usd),
                &format!("{}", r.weight_lb),
                &format!("{}", r.gc_dist_mi),
                &format!("{}", r.routed_dist_mi),
                if r.temp_controlled { "Y" } else { "N" },
                if r.export_flag { "Y" } else { "N" },
                hazmat,
            ])
            .map_err(|e| IngestError::Io(e.to_string()))?;
    }
    writer.flush().map_err(|e| IngestError::Io(e.to_string()))
}
