//! Core domain types: the five-mode taxonomy, shipment records, category code
//! tables, and origin/destination area typing.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Number of aggregated freight modes.
pub const NUM_MODES: usize = 5;

/// The five aggregated freight modes.
///
/// The 2017 CFS PUF reports 13 detailed mode codes; they collapse onto these
/// five classes (rail, water, and pipeline variants all fold into `Other`).
/// The numeric discriminants 1..=5 are stable and used in file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModeLabel {
    /// Mode 1: for-hire truck.
    ForHireTruck = 1,
    /// Mode 2: privately owned truck.
    PrivateTruck = 2,
    /// Mode 3: parcel service (parcel, USPS, or courier).
    Parcel = 3,
    /// Mode 4: air (including truck-and-air).
    Air = 4,
    /// Mode 5: other modes (rail, water, pipeline, and multi-mode combos).
    Other = 5,
}

impl ModeLabel {
    /// All five modes in ordinal order.
    pub const ALL: [ModeLabel; NUM_MODES] = [
        ModeLabel::ForHireTruck,
        ModeLabel::PrivateTruck,
        ModeLabel::Parcel,
        ModeLabel::Air,
        ModeLabel::Other,
    ];

    /// Zero-based dense index, suitable for probability vectors.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    /// One-based ordinal used in file formats (`1`..`5`).
    pub fn ordinal(self) -> u8 {
        self as u8
    }

    /// Inverse of [`ModeLabel::index`].
    pub fn from_index(index: usize) -> Option<ModeLabel> {
        ModeLabel::ALL.get(index).copied()
    }

    /// Inverse of [`ModeLabel::ordinal`].
    pub fn from_ordinal(ordinal: u8) -> Option<ModeLabel> {
        ModeLabel::from_index((ordinal as usize).checked_sub(1)?)
    }

    /// Human-readable mode name.
    pub fn name(self) -> &'static str {
        match self {
            ModeLabel::ForHireTruck => "for-hire truck",
            ModeLabel::PrivateTruck => "private truck",
            ModeLabel::Parcel => "parcel",
            ModeLabel::Air => "air",
            ModeLabel::Other => "other",
        }
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// PUF mode-code → aggregated-mode table.
///
/// Exactly these 14 detailed codes map to one of the five aggregate modes;
/// every other code (e.g. the suppressed `"00"`) is unmatched and excluded
/// from modeling.
pub const MODE_CODE_TABLE: [(&str, ModeLabel); 14] = [
    ("04", ModeLabel::ForHireTruck),
    ("05", ModeLabel::PrivateTruck),
    ("06", ModeLabel::Other),  // rail
    ("07", ModeLabel::Other),  // water
    ("08", ModeLabel::Other),  // inland water
    ("09", ModeLabel::Other),  // Great Lakes
    ("10", ModeLabel::Other),  // deep sea
    ("101", ModeLabel::Other), // multiple waterways
    ("11", ModeLabel::Air),
    ("12", ModeLabel::Other), // pipeline
    ("14", ModeLabel::Parcel),
    ("15", ModeLabel::Other), // truck and rail
    ("16", ModeLabel::Other), // truck and water
    ("17", ModeLabel::Other), // rail and water
];

/// Maps a raw PUF mode code onto its aggregated mode.
///
/// Returns `None` for codes outside the 14-code table; an unmatched code is a
/// legitimate data value (the PUF uses it for suppressed/aggregated rows),
/// not an error.
pub fn aggregate_mode(code: &str) -> Option<ModeLabel> {
    let code = code.trim();
    MODE_CODE_TABLE
        .iter()
        .find(|(c, _)| *c == code)
        .map(|&(_, mode)| mode)
}

/// Hazardous-material classification of a shipment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hazmat {
    /// Class 3 flammable liquids.
    Class3 = 0,
    /// Hazardous material other than class 3.
    OtherHaz = 1,
    /// Not hazardous.
    NotHaz = 2,
}

impl Hazmat {
    /// All values in declared (one-hot) order.
    pub const ALL: [Hazmat; 3] = [Hazmat::Class3, Hazmat::OtherHaz, Hazmat::NotHaz];

    /// Dense index matching the declared one-hot order.
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Statistical-area type of a CFS origin or destination area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AreaType {
    /// Combined statistical area.
    C = 0,
    /// Metropolitan statistical area.
    M = 1,
    /// Remainder-of-state area.
    R = 2,
}

impl AreaType {
    /// All values in declared (one-hot) order.
    pub const ALL: [AreaType; 3] = [AreaType::C, AreaType::M, AreaType::R];

    /// Dense index matching the declared one-hot order.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Parses the single-letter code used in area lookup tables.
    pub fn from_token(token: &str) -> Option<AreaType> {
        match token.trim() {
            "C" => Some(AreaType::C),
            "M" => Some(AreaType::M),
            "R" => Some(AreaType::R),
            _ => None,
        }
    }

    /// Single-letter code used in area lookup tables.
    pub fn token(self) -> &'static str {
        match self {
            AreaType::C => "C",
            AreaType::M => "M",
            AreaType::R => "R",
        }
    }
}

impl fmt::Display for AreaType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// One validated shipment with its observed (chosen) mode.
///
/// Invariants enforced at ingest: `weight_lb > 0`, `value_usd ≥ 0`, both
/// distances `≥ 0`, and `sctg_group` consistent with the configured SCTG
/// grouping. `routed_dist_mi` is the PUF's routed distance for the *chosen*
/// mode only — it may legitimately be below `gc_dist_mi` because of survey
/// noise, and it must never be used directly as a model input (see the
/// `features` module for the leakage-safe derived distances).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShipmentRecord {
    pub id: String,
    pub weight_lb: f64,
    pub value_usd: f64,
    /// Two-digit SCTG commodity code (43 categories).
    pub sctg: String,
    /// Aggregated SCTG group (9 categories), derived from `sctg`.
    pub sctg_group: String,
    /// Shipper industry classification (45 categories).
    pub naics: String,
    pub orig_area: String,
    pub dest_area: String,
    /// Great-circle distance between origin and destination, miles.
    pub gc_dist_mi: f64,
    /// Routed distance of the shipment under its chosen mode, miles.
    pub routed_dist_mi: f64,
    pub hazmat: Hazmat,
    pub temp_controlled: bool,
    pub export_flag: bool,
    /// Observed mode — the prediction target.
    pub mode: ModeLabel,
}

/// Errors from category and area lookups.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CategoryError {
    #[error("unknown SCTG code {0:?}: not present in the SCTG group table")]
    UnknownCategory(String),
    #[error("unknown CFS area code {0:?}: not present in the area-type lookup")]
    UnknownArea(String),
    #[error("SCTG group table is empty")]
    EmptyGroupTable,
    #[error("SCTG group table row {row}: {message}")]
    BadGroupRow { row: usize, message: String },
    #[error("area lookup row {row}: {message}")]
    BadAreaRow { row: usize, message: String },
    #[error("table i/o: {0}")]
    Io(String),
}

/// Config-supplied lookup tables: SCTG → 9-way group, and area → area type.
///
/// Both tables ship with documented defaults (see
/// [`CategoryMaps::default_sctg_groups`]) and can be replaced by CSV files so
/// the grouping matches whatever convention a study uses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryMaps {
    sctg_groups: BTreeMap<String, String>,
    area_types: BTreeMap<String, AreaType>,
}

impl CategoryMaps {
    pub fn new(
        sctg_groups: BTreeMap<String, String>,
        area_types: BTreeMap<String, AreaType>,
    ) -> CategoryMaps {
        CategoryMaps {
            sctg_groups,
            area_types,
        }
    }

    /// The default SCTG grouping: nine contiguous ranges over the 43
    /// two-digit codes 01–43.
    ///
    /// | group | SCTG codes |
    /// |-------|------------|
    /// | G1    | 01–05      |
    /// | G2    | 06–09      |
    /// | G3    | 10–14      |
    /// | G4    | 15–19      |
    /// | G5    | 20–24      |
    /// | G6    | 25–30      |
    /// | G7    | 31–34      |
    /// | G8    | 35–38      |
    /// | G9    | 39–43      |
    pub fn default_sctg_groups() -> BTreeMap<String, String> {
        const RANGES: [(u32, u32, &str); 9] = [
            (1, 5, "G1"),
            (6, 9, "G2"),
            (10, 14, "G3"),
            (15, 19, "G4"),
            (20, 24, "G5"),
            (25, 30, "G6"),
            (31, 34, "G7"),
            (35, 38, "G8"),
            (39, 43, "G9"),
        ];
        let mut map = BTreeMap::new();
        for (lo, hi, group) in RANGES {
            for code in lo..=hi {
                map.insert(format!("{code:02}"), group.to_string());
            }
        }
        map
    }

    /// A `CategoryMaps` with the default SCTG grouping and the given area
    /// lookup.
    pub fn with_default_groups(area_types: BTreeMap<String, AreaType>) -> CategoryMaps {
        CategoryMaps::new(Self::default_sctg_groups(), area_types)
    }

    /// Looks up the 9-way group of an SCTG code.
    pub fn sctg_group(&self, sctg: &str) -> Result<&str, CategoryError> {
        self.sctg_groups
            .get(sctg.trim())
            .map(String::as_str)
            .ok_or_else(|| CategoryError::UnknownCategory(sctg.trim().to_string()))
    }

    /// Classifies a CFS area code as combined / metropolitan / remainder.
    pub fn area_type(&self, area: &str) -> Result<AreaType, CategoryError> {
        self.area_types
            .get(area.trim())
            .copied()
            .ok_or_else(|| CategoryError::UnknownArea(area.trim().to_string()))
    }

    /// The distinct group codes, in sorted order.
    pub fn group_codes(&self) -> Vec<String> {
        let groups: BTreeSet<&String> = self.sctg_groups.values().collect();
        groups.into_iter().cloned().collect()
    }

    /// Number of SCTG codes the group table covers.
    pub fn sctg_code_count(&self) -> usize {
        self.sctg_groups.len()
    }

    /// Validates the group table: nonempty, no blank codes or groups.
    /// Returns the distinct group codes so callers can check coverage
    /// expectations (the default table has 43 codes over 9 groups).
    pub fn validate_groups(&self) -> Result<Vec<String>, CategoryError> {
        if self.sctg_groups.is_empty() {
            return Err(CategoryError::EmptyGroupTable);
        }
        for (row, (code, group)) in self.sctg_groups.iter().enumerate() {
            if code.trim().is_empty() || group.trim().is_empty() {
                return Err(CategoryError::BadGroupRow {
                    row,
                    message: "blank SCTG code or group code".to_string(),
                });
            }
        }
        Ok(self.group_codes())
    }

    /// Loads an SCTG group table from CSV with header `sctg,group`.
    pub fn load_sctg_groups_csv(path: &Path) -> Result<BTreeMap<String, String>, CategoryError> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| CategoryError::Io(format!("{}: {e}", path.display())))?;
        let mut map = BTreeMap::new();
        for (row, result) in reader.records().enumerate() {
            let record = result.map_err(|e| CategoryError::BadGroupRow {
                row: row + 2,
                message: e.to_string(),
            })?;
            let code = record.get(0).unwrap_or("").trim();
            let group = record.get(1).unwrap_or("").trim();
            if code.is_empty() || group.is_empty() {
                return Err(CategoryError::BadGroupRow {
                    row: row + 2,
                    message: "expected two nonempty columns: sctg,group".to_string(),
                });
            }
            map.insert(code.to_string(), group.to_string());
        }
        Ok(map)
    }

    /// Loads an area-type lookup from CSV with header `area,area_type` and
    /// `area_type` in {C, M, R}.
    pub fn load_area_types_csv(path: &Path) -> Result<BTreeMap<String, AreaType>, CategoryError> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| CategoryError::Io(format!("{}: {e}", path.display())))?;
        let mut map = BTreeMap::new();
        for (row, result) in reader.records().enumerate() {
            let record = result.map_err(|e| CategoryError::BadAreaRow {
                row: row + 2,
                message: e.to_string(),
            })?;
            let area = record.get(0).unwrap_or("").trim();
            let token = record.get(1).unwrap_or("").trim();
            let area_type = AreaType::from_token(token).ok_or_else(|| CategoryError::BadAreaRow {
                row: row + 2,
                message: format!("area type {token:?} is not one of C, M, R"),
            })?;
            if area.is_empty() {
                return Err(CategoryError::BadAreaRow {
                    row: row + 2,
                    message: "blank area code".to_string(),
                });
            }
            map.insert(area.to_string(), area_type);
        }
        Ok(map)
    }

    /// Writes the SCTG group table as CSV (`sctg,group`).
    pub fn write_sctg_groups_csv(&self, path: &Path) -> Result<(), CategoryError> {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| CategoryError::Io(format!("{}: {e}", path.display())))?;
        writer
            .write_record(["sctg", "group"])
            .map_err(|e| CategoryError::Io(e.to_string()))?;
        for (code, group) in &self.sctg_groups {
            writer
                .write_record([code.as_str(), group.as_str()])
                .map_err(|e| CategoryError::Io(e.to_string()))?;
        }
        writer.flush().map_err(|e| CategoryError::Io(e.to_string()))
    }

    /// Writes the area lookup as CSV (`area,area_type`).
    pub fn write_area_types_csv(&self, path: &Path) -> Result<(), CategoryError> {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| CategoryError::Io(format!("{}: {e}", path.display())))?;
        writer
            .write_record(["area", "area_type"])
            .map_err(|e| CategoryError::Io(e.to_string()))?;
        for (area, area_type) in &self.area_types {
            writer
                .write_record([area.as_str(), area_type.token()])
                .map_err(|e| CategoryError::Io(e.to_string()))?;
        }
        writer.flush().map_err(|e| CategoryError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_codes_map_as_documented() {
        assert_eq!(aggregate_mode("04"), Some(ModeLabel::ForHireTruck));
        assert_eq!(aggregate_mode("05"), Some(ModeLabel::PrivateTruck));
        assert_eq!(aggregate_mode("14"), Some(ModeLabel::Parcel));
        assert_eq!(aggregate_mode("11"), Some(ModeLabel::Air));
        // Truck-and-rail multiple modes folds into Other.
        assert_eq!(aggregate_mode("15"), Some(ModeLabel::Other));
    }

    #[test]
    fn unmatched_codes_are_values_not_errors() {
        assert_eq!(aggregate_mode("00"), None);
        assert_eq!(aggregate_mode("01"), None);
        assert_eq!(aggregate_mode(""), None);
        assert_eq!(aggregate_mode("4"), None); // codes are zero-padded
    }

    #[test]
    fn exactly_fourteen_codes_map() {
        let mapped: Vec<&str> = MODE_CODE_TABLE.iter().map(|(c, _)| *c).collect();
        assert_eq!(mapped.len(), 14);
        // Every mapped code round-trips through aggregate_mode.
        for (code, mode) in MODE_CODE_TABLE {
            assert_eq!(aggregate_mode(code), Some(mode));
        }
        // The preimage sizes per mode match the published grouping.
        let count = |m: ModeLabel| MODE_CODE_TABLE.iter().filter(|(_, v)| *v == m).count();
        assert_eq!(count(ModeLabel::ForHireTruck), 1);
        assert_eq!(count(ModeLabel::PrivateTruck), 1);
        assert_eq!(count(ModeLabel::Parcel), 1);
        assert_eq!(count(ModeLabel::Air), 1);
        assert_eq!(count(ModeLabel::Other), 10);
    }

    #[test]
    fn aggregate_mode_trims_whitespace() {
        assert_eq!(aggregate_mode(" 04 "), Some(ModeLabel::ForHireTruck));
    }

    #[test]
    fn mode_indices_round_trip() {
        for (i, mode) in ModeLabel::ALL.iter().enumerate() {
            assert_eq!(mode.index(), i);
            assert_eq!(mode.ordinal(), (i + 1) as u8);
            assert_eq!(ModeLabel::from_index(i), Some(*mode));
            assert_eq!(ModeLabel::from_ordinal((i + 1) as u8), Some(*mode));
        }
        assert_eq!(ModeLabel::from_index(5), None);
        assert_eq!(ModeLabel::from_ordinal(0), None);
        assert_eq!(ModeLabel::from_ordinal(6), None);
    }

    #[test]
    fn default_groups_cover_43_codes_across_9_groups() {
        let maps = CategoryMaps::with_default_groups(BTreeMap::new());
        assert_eq!(maps.sctg_code_count(), 43);
        let groups = maps.validate_groups().unwrap();
        assert_eq!(groups.len(), 9);
        // Spot-check boundaries.
        assert_eq!(maps.sctg_group("01").unwrap(), "G1");
        assert_eq!(maps.sctg_group("05").unwrap(), "G1");
        assert_eq!(maps.sctg_group("06").unwrap(), "G2");
        assert_eq!(maps.sctg_group("30").unwrap(), "G6");
        assert_eq!(maps.sctg_group("31").unwrap(), "G7");
        assert_eq!(maps.sctg_group("43").unwrap(), "G9");
    }

    #[test]
    fn unknown_sctg_is_an_error() {
        let maps = CategoryMaps::with_default_groups(BTreeMap::new());
        assert_eq!(
            maps.sctg_group("99"),
            Err(CategoryError::UnknownCategory("99".to_string()))
        );
    }

    #[test]
    fn sctg_lookup_is_deterministic() {
        let maps = CategoryMaps::with_default_groups(BTreeMap::new());
        assert_eq!(maps.sctg_group("17").unwrap(), maps.sctg_group("17").unwrap());
    }

    #[test]
    fn area_lookup_classifies_and_rejects() {
        let mut areas = BTreeMap::new();
        areas.insert("12345".to_string(), AreaType::C);
        areas.insert("229".to_string(), AreaType::M);
        areas.insert("25-99999".to_string(), AreaType::R);
        let maps = CategoryMaps::with_default_groups(areas);
        assert_eq!(maps.area_type("12345").unwrap(), AreaType::C);
        assert_eq!(maps.area_type("229").unwrap(), AreaType::M);
        assert_eq!(maps.area_type("25-99999").unwrap(), AreaType::R);
        assert_eq!(
            maps.area_type("00000"),
            Err(CategoryError::UnknownArea("00000".to_string()))
        );
    }

    #[test]
    fn category_tables_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut areas = BTreeMap::new();
        areas.insert("A1".to_string(), AreaType::C);
        areas.insert("A2".to_string(), AreaType::R);
        let maps = CategoryMaps::with_default_groups(areas);

        let groups_path = dir.path().join("groups.csv");
        let areas_path = dir.path().join("areas.csv");
        maps.write_sctg_groups_csv(&groups_path).unwrap();
        maps.write_area_types_csv(&areas_path).unwrap();

        let groups = CategoryMaps::load_sctg_groups_csv(&groups_path).unwrap();
        let areas = CategoryMaps::load_area_types_csv(&areas_path).unwrap();
        assert_eq!(CategoryMaps::new(groups, areas), maps);
    }

    #[test]
    fn bad_area_token_is_reported_with_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("areas.csv");
        std::fs::write(&path, "area,area_type\nA1,C\nA2,X\n").unwrap();
        match CategoryMaps::load_area_types_csv(&path) {
            Err(CategoryError::BadAreaRow { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected BadAreaRow, got {other:?}"),
        }
    }
}
