//! Confusion-matrix metrics, one-vs-rest ROC/AUC, and bootstrap standard
//! errors.
//!
//! Precision/recall/F1 headline numbers are support-weighted averages of the
//! per-class values (support-weighted recall is algebraically the same thing
//! as accuracy, which is why those two columns agree in the reports); macro
//! variants are also emitted. Balanced accuracy averages per-class recall
//! over the classes that actually appear in the truth.

use crate::learners::ProbVector;
use crate::model::{ModeLabel, NUM_MODES};
use crate::rng::rng_for;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions and truths differ in length: {predictions} vs {truths}")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("cannot compute metrics for an empty evaluation")]
    EmptyMatrix,
    #[error("AUC for {mode} is undefined: {positives} positives, {negatives} negatives")]
    UndefinedAuc {
        mode: ModeLabel,
        positives: u64,
        negatives: u64,
    },
    #[error("bootstrap needs at least 2 resamples, got {0}")]
    TooFewResamples(u32),
    #[error("i/o: {0}")]
    Io(String),
}

/// 5×5 count matrix; rows index the true mode, columns the predicted mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_MODES]; NUM_MODES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Number of records whose true class is `mode`.
    pub fn support(&self, mode: ModeLabel) -> u64 {
        self.counts[mode.index()].iter().sum()
    }

    /// Number of records predicted as `mode`.
    pub fn predicted(&self, mode: ModeLabel) -> u64 {
        self.counts.iter().map(|row| row[mode.index()]).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_MODES).map(|i| self.counts[i][i]).sum()
    }
}

/// Tallies predictions against truths.
pub fn confusion(
    predictions: &[ModeLabel],
    truths: &[ModeLabel],
) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyMatrix);
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in predictions.iter().zip(truths) {
        cm.counts[t.index()][p.index()] += 1;
    }
    Ok(cm)
}

/// Per-class diagnostics. Precision is 0 when the class is never predicted;
/// recall is 0 when it has no support (and is then excluded from balanced
/// accuracy and the macro averages).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total: u64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub per_class: [ClassMetrics; NUM_MODES],
}

/// Summary metrics from a confusion matrix.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let mut per_class = [ClassMetrics::default(); NUM_MODES];
    for mode in ModeLabel::ALL {
        let c = mode.index();
        let tp = cm.counts[c][c] as f64;
        let support = cm.support(mode);
        let predicted = cm.predicted(mode);
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class[c] = ClassMetrics {
            support,
            precision,
            recall,
            f1,
        };
    }
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let n_present = present.len() as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class
            .iter()
            .map(|m| m.support as f64 / total as f64 * f(m))
            .sum::<f64>()
    };
    let macro_avg =
        |f: fn(&ClassMetrics) -> f64| present.iter().map(|m| f(m)).sum::<f64>() / n_present;
    Ok(Metrics {
        total,
        accuracy: cm.correct() as f64 / total as f64,
        balanced_accuracy: macro_avg(|m| m.recall),
        precision_weighted: weighted(|m| m.precision),
        recall_weighted: weighted(|m| m.recall),
        f1_weighted: weighted(|m| m.f1),
        precision_macro: macro_avg(|m| m.precision),
        recall_macro: macro_avg(|m| m.recall),
        f1_macro: macro_avg(|m| m.f1),
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Records with score ≥ threshold are called positive. The first point
    /// uses +∞ (nothing called positive).
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub mode: ModeLabel,
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// Writes the curve as `threshold,fpr,tpr` rows.
    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        writer
            .write_record(["threshold", "fpr", "tpr"])
            .map_err(|e| EvalError::Io(e.to_string()))?;
        for p in &self.points {
            writer
                .write_record([
                    p.threshold.to_string(),
                    p.fpr.to_string(),
                    p.tpr.to_string(),
                ])
                .map_err(|e| EvalError::Io(e.to_string()))?;
        }
        writer.flush().map_err(|e| EvalError::Io(e.to_string()))
    }
}

/// One-vs-rest ROC for `mode`, scored by that mode's predicted probability.
///
/// Thresholds sweep the distinct scores from high to low; tied scores enter
/// as one block, so the trapezoidal AUC handles ties as diagonal segments
/// (equivalently: the probability a random positive outranks a random
/// negative, counting ties as half).
pub fn roc_curve(
    probabilities: &[ProbVector],
    truths: &[ModeLabel],
    mode: ModeLabel,
) -> Result<RocCurve, EvalError> {
    if probabilities.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: probabilities.len(),
            truths: truths.len(),
        });
    }
    let mut scored: Vec<(f64, bool)> = probabilities
        .iter()
        .zip(truths)
        .map(|(p, t)| (p[mode.index()], *t == mode))
        .collect();
    let positives = scored.iter().filter(|(_, pos)| *pos).count() as u64;
    let negatives = scored.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::UndefinedAuc {
            mode,
            positives,
            negatives,
        });
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("probabilities are not NaN"));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        // Consume the whole tied block before emitting a point.
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(RocCurve { mode, points, auc })
}

/// Per-mode AUC where defined, plus the unweighted mean of the defined ones.
pub fn auc_summary(
    probabilities: &[ProbVector],
    truths: &[ModeLabel],
) -> (Vec<(ModeLabel, Option<f64>)>, Option<f64>) {
    let per_mode: Vec<(ModeLabel, Option<f64>)> = ModeLabel::ALL
        .iter()
        .map(|&mode| {
            let auc = roc_curve(probabilities, truths, mode).ok().map(|c| c.auc);
            (mode, auc)
        })
        .collect();
    let defined: Vec<f64> = per_mode.iter().filter_map(|(_, a)| *a).collect();
    let mean = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    (per_mode, mean)
}

/// Sample standard deviation of accuracy over `b` with-replacement resamples
/// of the evaluated pairs.
pub fn bootstrap_se_accuracy(
    predictions: &[ModeLabel],
    truths: &[ModeLabel],
    b: u32,
    seed: u64,
) -> Result<f64, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyMatrix);
    }
    if b < 2 {
        return Err(EvalError::TooFewResamples(b));
    }
    let correct: Vec<bool> = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| p == t)
        .collect();
    let n = correct.len();
    let accuracies: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, "bootstrap", i as u64);
            let hits = (0..n)
                .filter(|_| correct[rng.gen_range(0..n)])
                .count();
            hits as f64 / n as f64
        })
        .collect();
    let mean = accuracies.iter().sum::<f64>() / b as f64;
    let var = accuracies
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / (b as f64 - 1.0);
    Ok(var.sqrt())
}
