//! Stratified train/test splitting and stratified k-fold assignment.
//!
//! Strata are (SCTG, NAICS) pairs: within every stratum the test fraction and
//! the fold sizes are balanced, so category composition is preserved on both
//! sides of the split. The same fold machinery serves feature derivation
//! (fold-excluded distance tables) and stacking (out-of-fold meta-features).

use crate::model::ShipmentRecord;
use crate::rng::rng_for;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

/// Which side of the train/test split a record landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    Train,
    Test,
}

impl Partition {
    pub fn token(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Test => "test",
        }
    }
}

/// Train/test assignment, parallel to the record slice it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub test_fraction: f64,
    /// `(record id, partition)` in input order.
    pub assignments: Vec<(String, Partition)>,
}

impl SplitAssignment {
    /// Indices of training records, in input order.
    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_of(Partition::Train)
    }

    /// Indices of test records, in input order.
    pub fn test_indices(&self) -> Vec<usize> {
        self.indices_of(Partition::Test)
    }

    fn indices_of(&self, which: Partition) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, (_, p))| *p == which)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn partition_of(&self, index: usize) -> Partition {
        self.assignments[index].1
    }

    /// Writes the assignment as a two-column CSV (`id,partition`).
    pub fn write_csv(&self, path: &Path) -> Result<(), SplitError> {
        let mut writer =
            csv::Writer::from_path(path).map_err(|e| SplitError::Io(format!("{}: {e}", path.display())))?;
        writer
            .write_record(["id", "partition"])
            .map_err(|e| SplitError::Io(e.to_string()))?;
        for (id, partition) in &self.assignments {
            writer
                .write_record([id.as_str(), partition.token()])
                .map_err(|e| SplitError::Io(e.to_string()))?;
        }
        writer.flush().map_err(|e| SplitError::Io(e.to_string()))
    }
}

/// K-fold assignment, parallel to the record slice it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub seed: u64,
    pub k: usize,
    /// `(record id, fold index)` in input order.
    pub assignments: Vec<(String, usize)>,
}

impl FoldAssignment {
    /// Fold index per record, in input order.
    pub fn fold_indices(&self) -> Vec<usize> {
        self.assignments.iter().map(|(_, f)| *f).collect()
    }

    pub fn fold_of(&self, index: usize) -> usize {
        self.assignments[index].1
    }

    /// Number of records in each fold.
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for (_, fold) in &self.assignments {
            sizes[*fold] += 1;
        }
        sizes
    }

    /// Writes the assignment as a two-column CSV (`id,fold`).
    pub fn write_csv(&self, path: &Path) -> Result<(), SplitError> {
        let mut writer =
            csv::Writer::from_path(path).map_err(|e| SplitError::Io(format!("{}: {e}", path.display())))?;
        writer
            .write_record(["id", "fold"])
            .map_err(|e| SplitError::Io(e.to_string()))?;
        for (id, fold) in &self.assignments {
            writer
                .write_record([id.as_str(), &fold.to_string()])
                .map_err(|e| SplitError::Io(e.to_string()))?;
        }
        writer.flush().map_err(|e| SplitError::Io(e.to_string()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("cannot split an empty dataset")]
    EmptyDataset,
    #[error("test fraction must be in (0,1), got {0}")]
    InvalidFraction(f64),
    #[error("k must be ≥ 2, got {0}")]
    InvalidK(usize),
    #[error("k = {k} exceeds the number of records ({records})")]
    TooFewRecords { records: usize, k: usize },
    #[error("i/o: {0}")]
    Io(String),
}

/// Groups record indices by (sctg, naics), in deterministic key order.
fn strata(records: &[ShipmentRecord]) -> BTreeMap<(String, String), Vec<usize>> {
    let mut map: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        map.entry((r.sctg.clone(), r.naics.clone())).or_default().push(i);
    }
    map
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Stratified train/test split.
///
/// Within each (SCTG, NAICS) stratum of size `n ≥ 2`, the test count is
/// `round(n·test_fraction)` rounded half-up and clamped to at most `n−1`, so
/// no stratum is ever all-test; singleton strata go entirely to Train to keep
/// every category represented in training. Membership within a stratum is a
/// uniform draw determined by `seed`.
pub fn stratified_split(
    records: &[ShipmentRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment, SplitError> {
    if records.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(SplitError::InvalidFraction(test_fraction));
    }
    let mut tags = vec![Partition::Train; records.len()];
    for ((sctg, naics), mut members) in strata(records) {
        let n = members.len();
        if n == 1 {
            continue; // singleton stratum stays in Train
        }
        let test_count = round_half_up(n as f64 * test_fraction).min(n - 1);
        let mut rng = rng_for(seed, &format!("split:{sctg}|{naics}"), 0);
        members.shuffle(&mut rng);
        for &index in members.iter().take(test_count) {
            tags[index] = Partition::Test;
        }
    }
    Ok(SplitAssignment {
        seed,
        test_fraction,
        assignments: records
            .iter()
            .zip(tags)
            .map(|(r, t)| (r.id.clone(), t))
            .collect(),
    })
}

/// Stratified k-fold assignment.
///
/// Each stratum's members are shuffled and dealt round-robin to folds,
/// starting from a random fold offset, so per-stratum fold sizes differ by at
/// most one.
pub fn stratified_kfold(
    records: &[ShipmentRecord],
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, SplitError> {
    if records.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    if k < 2 {
        return Err(SplitError::InvalidK(k));
    }
    if k > records.len() {
        return Err(SplitError::TooFewRecords {
            records: records.len(),
            k,
        });
    }
    let mut folds = vec![0usize; records.len()];
    for ((sctg, naics), mut members) in strata(records) {
        let mut rng = rng_for(seed, &format!("fold:{sctg}|{naics}"), 0);
        members.shuffle(&mut rng);
        let offset = rng.gen_range(0..k);
        for (i, &index) in members.iter().enumerate() {
            folds[index] = (offset + i) % k;
        }
    }
    Ok(FoldAssignment {
        seed,
        k,
        assignments: records
            .iter()
            .zip(folds)
            .map(|(r, f)| (r.id.clone(), f))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Hazmat, ModeLabel};

    /// A minimal record varying only in the stratum key and id.
    fn record(id: usize, sctg: &str, naics: &str) -> ShipmentRecord {
        ShipmentRecord {
            id: format!("r{id}"),
            weight_lb: 10.0,
            value_usd: 100.0,
            sctg: sctg.to_string(),
            sctg_group: "G1".to_string(),
            naics: naics.to_string(),
            orig_area: "A1".to_string(),
            dest_area: "A2".to_string(),
            gc_dist_mi: 100.0,
            routed_dist_mi: 120.0,
            hazmat: Hazmat::NotHaz,
            temp_controlled: false,
            export_flag: false,
            mode: ModeLabel::ForHireTruck,
        }
    }

    fn batch(count: usize, sctg: &str, naics: &str, start: usize) -> Vec<ShipmentRecord> {
        (0..count).map(|i| record(start + i, sctg, naics)).collect()
    }

    #[test]
    fn one_stratum_100_records_fraction_02() {
        let records = batch(100, "01", "325", 0);
        let split = stratified_split(&records, 0.2, 7).unwrap();
        assert_eq!(split.test_indices().len(), 20);
        assert_eq!(split.train_indices().len(), 80);
    }

    #[test]
    fn singleton_stratum_goes_to_train() {
        let records = batch(1, "01", "325", 0);
        let split = stratified_split(&records, 0.2, 7).unwrap();
        assert_eq!(split.partition_of(0), Partition::Train);
    }

    #[test]
    fn two_strata_of_10_and_30_yield_2_and_6_test() {
        let mut records = batch(10, "01", "325", 0);
        records.extend(batch(30, "02", "311", 10));
        let split = stratified_split(&records, 0.2, 7).unwrap();
        let test_small = (0..10).filter(|&i| split.partition_of(i) == Partition::Test).count();
        let test_large = (10..40).filter(|&i| split.partition_of(i) == Partition::Test).count();
        assert_eq!(test_small, 2);
        assert_eq!(test_large, 6);
    }

    #[test]
    fn split_is_exhaustive_and_exclusive() {
        let mut records = batch(13, "01", "325", 0);
        records.extend(batch(5, "02", "311", 13));
        records.extend(batch(1, "03", "312", 18));
        let split = stratified_split(&records, 0.25, 3).unwrap();
        let mut all: Vec<usize> = split.train_indices();
        all.extend(split.test_indices());
        all.sort_unstable();
        assert_eq!(all, (0..19).collect::<Vec<_>>());
    }

    #[test]
    fn no_nonsingleton_stratum_is_all_test() {
        let records = batch(2, "01", "325", 0);
        let split = stratified_split(&records, 0.99, 7).unwrap();
        assert_eq!(split.test_indices().len(), 1);
        assert_eq!(split.train_indices().len(), 1);
    }

    #[test]
    fn changing_seed_changes_membership_not_counts() {
        let mut records = batch(40, "01", "325", 0);
        records.extend(batch(25, "02", "311", 40));
        let a = stratified_split(&records, 0.2, 1).unwrap();
        let b = stratified_split(&records, 0.2, 2).unwrap();
        assert_eq!(a.test_indices().len(), b.test_indices().len());
        assert_ne!(a.test_indices(), b.test_indices());
        // Per-stratum counts identical too.
        for range in [0..40usize, 40..65] {
            let ca = range.clone().filter(|&i| a.partition_of(i) == Partition::Test).count();
            let cb = range.clone().filter(|&i| b.partition_of(i) == Partition::Test).count();
            assert_eq!(ca, cb);
        }
    }

    #[test]
    fn same_seed_reproduces_split() {
        let records = batch(50, "01", "325", 0);
        assert_eq!(
            stratified_split(&records, 0.2, 9).unwrap(),
            stratified_split(&records, 0.2, 9).unwrap()
        );
    }

    #[test]
    fn empty_and_bad_fraction_error() {
        assert_eq!(stratified_split(&[], 0.2, 1), Err(SplitError::EmptyDataset));
        let records = batch(3, "01", "325", 0);
        assert_eq!(
            stratified_split(&records, 0.0, 1),
            Err(SplitError::InvalidFraction(0.0))
        );
        assert_eq!(
            stratified_split(&records, 1.0, 1),
            Err(SplitError::InvalidFraction(1.0))
        );
    }

    #[test]
    fn ten_records_k5_gives_two_per_fold() {
        let records = batch(10, "01", "325", 0);
        let folds = stratified_kfold(&records, 5, 3).unwrap();
        assert_eq!(folds.fold_sizes(), vec![2, 2, 2, 2, 2]);
    }

    #[test]
    fn seven_records_k5_gives_sizes_22111() {
        let records = batch(7, "01", "325", 0);
        let folds = stratified_kfold(&records, 5, 3).unwrap();
        let mut sizes = folds.fold_sizes();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![2, 2, 1, 1, 1]);
    }

    #[test]
    fn kfold_same_seed_is_identical() {
        let mut records = batch(20, "01", "325", 0);
        records.extend(batch(9, "02", "311", 20));
        assert_eq!(
            stratified_kfold(&records, 5, 11).unwrap(),
            stratified_kfold(&records, 5, 11).unwrap()
        );
    }

    #[test]
    fn kfold_errors() {
        assert_eq!(stratified_kfold(&[], 5, 1), Err(SplitError::EmptyDataset));
        let records = batch(3, "01", "325", 0);
        assert_eq!(stratified_kfold(&records, 1, 1), Err(SplitError::InvalidK(1)));
        assert_eq!(
            stratified_kfold(&records, 5, 1),
            Err(SplitError::TooFewRecords { records: 3, k: 5 })
        );
    }

    #[test]
    fn per_stratum_fold_sizes_differ_by_at_most_one() {
        let mut records = batch(23, "01", "325", 0);
        records.extend(batch(4, "02", "311", 23));
        let folds = stratified_kfold(&records, 5, 3).unwrap();
        for range in [0..23usize, 23..27] {
            let mut sizes = vec![0usize; 5];
            for i in range {
                sizes[folds.fold_of(i)] += 1;
            }
            let max = *sizes.iter().max().unwrap();
            let min = *sizes.iter().min().unwrap();
            assert!(max - min <= 1, "stratum fold sizes {sizes:?}");
        }
    }

    #[test]
    fn csv_exports_have_one_row_per_record() {
        let dir = tempfile::tempdir().unwrap();
        let records = batch(6, "01", "325", 0);
        let split = stratified_split(&records, 0.3, 1).unwrap();
        let folds = stratified_kfold(&records, 3, 1).unwrap();
        let split_path = dir.path().join("split.csv");
        let folds_path = dir.path().join("folds.csv");
        split.write_csv(&split_path).unwrap();
        folds.write_csv(&folds_path).unwrap();
        let split_text = std::fs::read_to_string(&split_path).unwrap();
        let folds_text = std::fs::read_to_string(&folds_path).unwrap();
        assert_eq!(split_text.lines().count(), 7);
        assert!(split_text.starts_with("id,partition\n"));
        assert_eq!(folds_text.lines().count(), 7);
        assert!(folds_text.lines().any(|l| l.starts_with("r0,")));
    }
}
