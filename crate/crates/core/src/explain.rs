//! Model interpretation: impurity/gain feature importance, exact
//! path-dependent TreeSHAP attributions with a brute-force Shapley oracle,
//! and SHAP summary/dependence/force exports.
//!
//! SHAP values here use the path-dependent conditioning semantics: the
//! expectation of the model output given a feature subset is evaluated by
//! walking the tree, following the record's branch for conditioned features
//! and averaging children by their training-sample covers otherwise. The
//! polynomial-time algorithm and the exponential oracle share exactly this
//! definition, so their agreement is a meaningful correctness check rather
//! than an approximation statement.
//!
//! Forest attributions are means of per-tree attributions on the probability
//! scale; boosted attributions are per-class sums of per-round regression
//! trees on the margin (pre-softmax) scale, with the class prior folded into
//! the base value. Reports label their scale explicitly.

use crate::learners::{
    BoostedModel, ForestModel, LearnerError, LearnerModel, RegressionNode, RegressionTreeModel,
    TreeModel, TreeNode,
};
use crate::model::NUM_MODES;
use crate::rng::rng_for;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("brute-force Shapley supports at most 12 features, got {0}")]
    TooManyFeatures(usize),
    #[error("{0} models are not tree-structured; SHAP requires trees")]
    NotTreeBased(String),
    #[error("feature {0:?} is not in the report")]
    UnknownFeature(String),
    #[error("expected {expected} feature names, got {got}")]
    NameCountMismatch { expected: usize, got: usize },
    #[error("expected {expected} record ids, got {got}")]
    IdCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("i/o: {0}")]
    Io(String),
}

// ---------------------------------------------------------------------------
// Generic tree view
// ---------------------------------------------------------------------------

/// Tree structure reduced to what SHAP needs: topology, thresholds,
/// training-sample covers, and per-output leaf values.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        cover: f64,
    },
    Leaf {
        value: Vec<f64>,
        cover: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapTree {
    pub nodes: Vec<ShapNode>,
    pub n_features: usize,
    pub n_outputs: usize,
}

impl ShapTree {
    pub fn from_classification(tree: &TreeModel) -> ShapTree {
        let nodes = tree
            .nodes
            .iter()
            .map(|n| match *n {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    n_samples,
                    ..
                } => ShapNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    cover: n_samples as f64,
                },
                TreeNode::Leaf { dist, n_samples } => ShapNode::Leaf {
                    value: dist.to_vec(),
                    cover: n_samples as f64,
                },
            })
            .collect();
        ShapTree {
            nodes,
            n_features: tree.n_features,
            n_outputs: NUM_MODES,
        }
    }

    pub fn from_regression(tree: &RegressionTreeModel) -> ShapTree {
        let nodes = tree
            .nodes
            .iter()
            .map(|n| match *n {
                RegressionNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    n_samples,
                    ..
                } => ShapNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    cover: n_samples as f64,
                },
                RegressionNode::Leaf { value, n_samples } => ShapNode::Leaf {
                    value: vec![value],
                    cover: n_samples as f64,
                },
            })
            .collect();
        ShapTree {
            nodes,
            n_features: tree.n_features,
            n_outputs: 1,
        }
    }

    fn cover(&self, node: usize) -> f64 {
        match &self.nodes[node] {
            ShapNode::Internal { cover, .. } | ShapNode::Leaf { cover, .. } => *cover,
        }
    }

    /// Model output at `x` (plain traversal).
    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                ShapNode::Leaf { value, .. } => return value.clone(),
                ShapNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Expected output over the training distribution (cover-weighted leaf
    /// mean) — the SHAP base value.
    pub fn expected_value(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_outputs];
        let root_cover = self.cover(0);
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match &self.nodes[node] {
                ShapNode::Leaf { value, cover } => {
                    for (o, v) in out.iter_mut().zip(value) {
                        *o += v * cover / root_cover;
                    }
                }
                ShapNode::Internal { left, right, .. } => {
                    stack.push(*left);
                    stack.push(*right);
                }
            }
        }
        out
    }

    /// Path-dependent conditional expectation of the output given the
    /// features in `mask` (bitmask) take their values from `x`: conditioned
    /// features follow `x`'s branch, the rest average children by cover.
    pub fn exp_value_subset(&self, x: &[f64], mask: u64) -> Vec<f64> {
        self.exp_value_at(0, x, mask)
    }

    fn exp_value_at(&self, node: usize, x: &[f64], mask: u64) -> Vec<f64> {
        match &self.nodes[node] {
            ShapNode::Leaf { value, .. } => value.clone(),
            ShapNode::Internal {
                feature,
                threshold,
                left,
                right,
                cover,
            } => {
                if mask >> feature & 1 == 1 {
                    let child = if x[*feature] <= *threshold { *left } else { *right };
                    self.exp_value_at(child, x, mask)
                } else {
                    let lv = self.exp_value_at(*left, x, mask);
                    let rv = self.exp_value_at(*right, x, mask);
                    let lw = self.cover(*left) / cover;
                    let rw = self.cover(*right) / cover;
                    lv.iter().zip(&rv).map(|(l, r)| l * lw + r * rw).collect()
                }
            }
        }
    }
}

/// Attributions for one record: `phi[feature][output]`, plus the per-output
/// base value. Local accuracy: `base + Σ_features phi = output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub phi: Vec<Vec<f64>>,
    pub base: Vec<f64>,
}

impl ShapExplanation {
    fn zeros(n_features: usize, n_outputs: usize) -> Self {
        ShapExplanation {
            phi: vec![vec![0.0; n_outputs]; n_features],
            base: vec![0.0; n_outputs],
        }
    }

    /// `base + Σ phi` per output — what local accuracy compares to the
    /// model output.
    pub fn reconstructed_output(&self) -> Vec<f64> {
        let mut out = self.base.clone();
        for row in &self.phi {
            for (o, p) in out.iter_mut().zip(row) {
                *o += p;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Path-dependent TreeSHAP
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct PathElement {
    /// Feature of the split that brought us here; the root sentinel is
    /// `usize::MAX`.
    feature: usize,
    /// Fraction of paths flowing through when the feature is unknown.
    zero: f64,
    /// 1 if `x` follows this branch, 0 otherwise (products for duplicates).
    one: f64,
    /// Permutation weight accumulator.
    w: f64,
}

const ROOT_SENTINEL: usize = usize::MAX;

fn extend(path: &mut Vec<PathElement>, zero: f64, one: f64, feature: usize) {
    let d = path.len();
    path.push(PathElement {
        feature,
        zero,
        one,
        w: if d == 0 { 1.0 } else { 0.0 },
    });
    for i in (0..d).rev() {
        path[i + 1].w += one * path[i].w * (i + 1) as f64 / (d + 1) as f64;
        path[i].w = zero * path[i].w * (d - i) as f64 / (d + 1) as f64;
    }
}

fn unwind(path: &mut Vec<PathElement>, i: usize) {
    let d = path.len() - 1;
    let one = path[i].one;
    let zero = path[i].zero;
    let mut next = path[d].w;
    for j in (0..d).rev() {
        if one != 0.0 {
            let tmp = path[j].w;
            path[j].w = next * (d + 1) as f64 / ((j + 1) as f64 * one);
            next = tmp - path[j].w * zero * (d - j) as f64 / (d + 1) as f64;
        } else {
            path[j].w = path[j].w * (d + 1) as f64 / (zero * (d - j) as f64);
        }
    }
    for j in i..d {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElement], i: usize) -> f64 {
    let d = path.len() - 1;
    let one = path[i].one;
    let zero = path[i].zero;
    let mut next = path[d].w;
    let mut total = 0.0;
    for j in (0..d).rev() {
        if one != 0.0 {
            let tmp = next * (d + 1) as f64 / ((j + 1) as f64 * one);
            total += tmp;
            next = path[j].w - tmp * zero * (d - j) as f64 / (d + 1) as f64;
        } else {
            total += path[j].w * (d + 1) as f64 / (zero * (d - j) as f64);
        }
    }
    total
}

fn shap_recurse(
    tree: &ShapTree,
    x: &[f64],
    phi: &mut [Vec<f64>],
    node: usize,
    parent_path: &[PathElement],
    parent_zero: f64,
    parent_one: f64,
    parent_feature: usize,
) {
    let mut path = parent_path.to_vec();
    extend(&mut path, parent_zero, parent_one, parent_feature);
    match &tree.nodes[node] {
        ShapNode::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let el = path[i];
                let scale = w * (el.one - el.zero);
                for (out, v) in phi[el.feature].iter_mut().zip(value) {
                    *out += scale * v;
                }
            }
        }
        ShapNode::Internal {
            feature,
            threshold,
            left,
            right,
            cover,
        } => {
            let (hot, cold) = if x[*feature] <= *threshold {
                (*left, *right)
            } else {
                (*right, *left)
            };
            let hot_zero = tree.cover(hot) / cover;
            let cold_zero = tree.cover(cold) / cover;
            let (mut inc_zero, mut inc_one) = (1.0, 1.0);
            if let Some(k) = path.iter().position(|e| e.feature == *feature) {
                inc_zero = path[k].zero;
                inc_one = path[k].one;
                unwind(&mut path, k);
            }
            shap_recurse(tree, x, phi, hot, &path, hot_zero * inc_zero, inc_one, *feature);
            shap_recurse(tree, x, phi, cold, &path, cold_zero * inc_zero, 0.0, *feature);
        }
    }
}

/// Exact path-dependent TreeSHAP for one tree and one record.
pub fn tree_shap(tree: &ShapTree, x: &[f64]) -> ShapExplanation {
    let mut explanation = ShapExplanation::zeros(tree.n_features, tree.n_outputs);
    shap_recurse(tree, x, &mut explanation.phi, 0, &[], 1.0, 1.0, ROOT_SENTINEL);
    explanation.base = tree.expected_value();
    explanation
}

/// Exponential-time Shapley values with the same path-dependent expectation
/// semantics as [`tree_shap`]; the verification oracle.
pub fn brute_force_shapley(tree: &ShapTree, x: &[f64]) -> Result<ShapExplanation, ExplainError> {
    let f = tree.n_features;
    if f > 12 {
        return Err(ExplainError::TooManyFeatures(f));
    }
    let subsets = 1u64 << f;
    let values: Vec<Vec<f64>> = (0..subsets)
        .map(|mask| tree.exp_value_subset(x, mask))
        .collect();
    let mut factorial = vec![1.0f64; f + 1];
    for i in 1..=f {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let mut explanation = ShapExplanation::zeros(f, tree.n_outputs);
    for i in 0..f {
        for mask in 0..subsets {
            if mask >> i & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let weight = factorial[s] * factorial[f - s - 1] / factorial[f];
            let with = &values[(mask | 1 << i) as usize];
            let without = &values[mask as usize];
            for (out, (a, b)) in explanation.phi[i].iter_mut().zip(with.iter().zip(without)) {
                *out += weight * (a - b);
            }
        }
    }
    explanation.base = values[0].clone();
    Ok(explanation)
}

/// Random cover-consistent tree fixtures for oracle comparisons (features
/// may repeat along a path, exercising the duplicate-feature bookkeeping).
pub fn random_shap_tree(n_features: usize, depth: u32, n_outputs: usize, seed: u64) -> ShapTree {
    let mut rng = rng_for(seed, "shap-fixture", 0);
    let mut nodes = Vec::new();
    build_random_node(&mut nodes, &mut rng, n_features, n_outputs, depth, 64.0);
    ShapTree {
        nodes,
        n_features,
        n_outputs,
    }
}

fn build_random_node(
    nodes: &mut Vec<ShapNode>,
    rng: &mut impl Rng,
    n_features: usize,
    n_outputs: usize,
    depth: u32,
    cover: f64,
) -> usize {
    let index = nodes.len();
    if depth == 0 || cover < 2.0 || rng.gen_bool(0.15) {
        let value = (0..n_outputs).map(|_| rng.gen_range(0.0..1.0)).collect();
        nodes.push(ShapNode::Leaf { value, cover });
        return index;
    }
    nodes.push(ShapNode::Leaf {
        value: vec![],
        cover: 0.0,
    }); // placeholder
    let feature = rng.gen_range(0..n_features);
    let threshold = rng.gen_range(0.0..1.0);
    let left_cover = (cover * rng.gen_range(0.2..0.8)).max(1.0).floor();
    let right_cover = (cover - left_cover).max(1.0);
    let left = build_random_node(nodes, rng, n_features, n_outputs, depth - 1, left_cover);
    let right = build_random_node(nodes, rng, n_features, n_outputs, depth - 1, right_cover);
    nodes[index] = ShapNode::Internal {
        feature,
        threshold,
        left,
        right,
        cover: left_cover + right_cover,
    };
    index
}

// ---------------------------------------------------------------------------
// Model-level SHAP
// ---------------------------------------------------------------------------

/// Output scale attributions are reported on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapScale {
    /// Class probabilities (trees and forests).
    Probability,
    /// Pre-softmax margins (boosted models).
    Margin,
}

fn combine_mean(parts: &[ShapExplanation], n_features: usize, n_outputs: usize) -> ShapExplanation {
    let mut total = ShapExplanation::zeros(n_features, n_outputs);
    let scale = 1.0 / parts.len() as f64;
    for part in parts {
        for (trow, prow) in total.phi.iter_mut().zip(&part.phi) {
            for (t, p) in trow.iter_mut().zip(prow) {
                *t += p * scale;
            }
        }
        for (t, b) in total.base.iter_mut().zip(&part.base) {
            *t += b * scale;
        }
    }
    total
}

/// SHAP attributions for one record under any tree-structured learner.
///
/// Returns the attributions and the scale they (and their base) live on.
pub fn shap_for_learner(
    model: &LearnerModel,
    x: &[f64],
) -> Result<(ShapExplanation, ShapScale), ExplainError> {
    match model {
        LearnerModel::DecisionTree(tree) => {
            let view = ShapTree::from_classification(tree);
            Ok((tree_shap(&view, x), ShapScale::Probability))
        }
        LearnerModel::Forest(forest) => {
            let views: Vec<ShapTree> = forest
                .trees
                .iter()
                .map(ShapTree::from_classification)
                .collect();
            let parts: Vec<ShapExplanation> = views.iter().map(|t| tree_shap(t, x)).collect();
            Ok((
                combine_mean(&parts, forest.n_features, NUM_MODES),
                ShapScale::Probability,
            ))
        }
        LearnerModel::Boosted(boosted) => Ok((shap_for_boosted(boosted, x), ShapScale::Margin)),
        LearnerModel::Logistic(_) => Err(ExplainError::NotTreeBased("logistic".into())),
        LearnerModel::NaiveBayes(_) => Err(ExplainError::NotTreeBased("naive-bayes".into())),
        LearnerModel::Knn(_) => Err(ExplainError::NotTreeBased("knn".into())),
    }
}

/// Margin-scale SHAP for a boosted model: per class, the learning-rate-scaled
/// sum of per-round tree attributions; the class prior joins the base.
pub fn shap_for_boosted(model: &BoostedModel, x: &[f64]) -> ShapExplanation {
    let mut total = ShapExplanation::zeros(model.n_features, NUM_MODES);
    total.base = model.base_scores.to_vec();
    for round in &model.trees {
        for (c, tree) in round.iter().enumerate() {
            let view = ShapTree::from_regression(tree);
            let part = tree_shap(&view, x);
            for (feature, row) in part.phi.iter().enumerate() {
                total.phi[feature][c] += model.learning_rate * row[0];
            }
            total.base[c] += model.learning_rate * part.base[0];
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Feature importance
// ---------------------------------------------------------------------------

/// Feature name → normalized nonnegative importance, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub entries: Vec<(String, f64)>,
}

impl ImportanceReport {
    fn from_raw(raw: Vec<f64>, names: &[String]) -> Result<Self, ExplainError> {
        if raw.len() != names.len() {
            return Err(ExplainError::NameCountMismatch {
                expected: raw.len(),
                got: names.len(),
            });
        }
        let total: f64 = raw.iter().sum();
        let entries = names
            .iter()
            .zip(raw)
            .map(|(n, v)| (n.clone(), if total > 0.0 { v / total } else { 0.0 }))
            .collect();
        Ok(ImportanceReport { entries })
    }

    /// Entries sorted by importance, descending (ties keep schema order).
    pub fn ranked(&self) -> Vec<(String, f64)> {
        let mut entries = self.entries.clone();
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("importances are finite"));
        entries
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ExplainError> {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| ExplainError::Io(format!("{}: {e}", path.display())))?;
        writer
            .write_record(["feature", "importance"])
            .map_err(|e| ExplainError::Io(e.to_string()))?;
        for (name, value) in self.ranked() {
            writer
                .write_record([name.as_str(), &value.to_string()])
                .map_err(|e| ExplainError::Io(e.to_string()))?;
        }
        writer.flush().map_err(|e| ExplainError::Io(e.to_string()))
    }
}

fn tree_raw_importance(tree: &TreeModel) -> Vec<f64> {
    let mut raw = vec![0.0; tree.n_features];
    let root_samples = match tree.nodes[0] {
        TreeNode::Internal { n_samples, .. } | TreeNode::Leaf { n_samples, .. } => {
            n_samples as f64
        }
    };
    for node in &tree.nodes {
        if let TreeNode::Internal {
            feature,
            n_samples,
            gain,
            ..
        } = node
        {
            raw[*feature] += *n_samples as f64 / root_samples * gain;
        }
    }
    raw
}

/// Mean-decrease-impurity importance for one classification tree.
pub fn impurity_importance_tree(
    tree: &TreeModel,
    names: &[String],
) -> Result<ImportanceReport, ExplainError> {
    ImportanceReport::from_raw(tree_raw_importance(tree), names)
}

/// MDI importance for a forest: per-tree cover-weighted Gini gains, averaged
/// over trees, normalized to sum 1.
pub fn impurity_importance(
    forest: &ForestModel,
    names: &[String],
) -> Result<ImportanceReport, ExplainError> {
    let mut mean = vec![0.0; forest.n_features];
    for tree in &forest.trees {
        for (m, v) in mean.iter_mut().zip(tree_raw_importance(tree)) {
            *m += v / forest.trees.len() as f64;
        }
    }
    ImportanceReport::from_raw(mean, names)
}

/// Total-gain importance for a boosted model, summed over every tree of
/// every round, normalized to sum 1.
pub fn gain_importance(
    model: &BoostedModel,
    names: &[String],
) -> Result<ImportanceReport, ExplainError> {
    let mut raw = vec![0.0; model.n_features];
    for round in &model.trees {
        for tree in round {
            for node in &tree.nodes {
                if let RegressionNode::Internal { feature, gain, .. } = node {
                    raw[*feature] += gain;
                }
            }
        }
    }
    ImportanceReport::from_raw(raw, names)
}

// ---------------------------------------------------------------------------
// Batch reports and exports
// ---------------------------------------------------------------------------

/// SHAP attributions for a batch of records, with everything exports need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapReport {
    pub scale: ShapScale,
    pub feature_names: Vec<String>,
    /// Per-output base value (identical across records by construction).
    pub base: Vec<f64>,
    pub ids: Vec<String>,
    /// `phi[record][feature][output]`.
    pub phi: Vec<Vec<Vec<f64>>>,
    /// Model output per record on `scale`.
    pub outputs: Vec<Vec<f64>>,
}

/// Computes SHAP attributions for every row of `x` under a tree-structured
/// learner. Rows are processed in parallel; output order matches input.
pub fn build_shap_report(
    model: &LearnerModel,
    x: &[Vec<f64>],
    ids: &[String],
    feature_names: &[String],
) -> Result<ShapReport, ExplainError> {
    let n_features = model.n_features();
    if feature_names.len() != n_features {
        return Err(ExplainError::NameCountMismatch {
            expected: n_features,
            got: feature_names.len(),
        });
    }
    if ids.len() != x.len() {
        return Err(ExplainError::IdCountMismatch {
            expected: x.len(),
            got: ids.len(),
        });
    }
    let explained: Result<Vec<(ShapExplanation, ShapScale)>, ExplainError> = x
        .par_iter()
        .map(|row| shap_for_learner(model, row))
        .collect();
    let explained = explained?;
    let scale = explained
        .first()
        .map(|(_, s)| *s)
        .unwrap_or(ShapScale::Probability);
    let base = explained
        .first()
        .map(|(e, _)| e.base.clone())
        .unwrap_or_default();
    let outputs = explained
        .iter()
        .map(|(e, _)| e.reconstructed_output())
        .collect();
    let phi = explained.into_iter().map(|(e, _)| e.phi).collect();
    Ok(ShapReport {
        scale,
        feature_names: feature_names.to_vec(),
        base,
        ids: ids.to_vec(),
        phi,
        outputs,
    })
}

/// One row of the mean-|φ| summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub class: usize,
    pub feature: String,
    pub mean_abs_phi: f64,
}

/// Per-class, per-feature mean of |φ|, features ranked by their total across
/// classes (descending; ties keep schema order).
pub fn shap_summary(report: &ShapReport) -> Vec<SummaryRow> {
    let n_features = report.feature_names.len();
    let n_outputs = report.base.len();
    let n_records = report.phi.len().max(1) as f64;
    let mut mean_abs = vec![vec![0.0f64; n_outputs]; n_features];
    for record in &report.phi {
        for (f, row) in record.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                mean_abs[f][c] += v.abs() / n_records;
            }
        }
    }
    let mut order: Vec<usize> = (0..n_features).collect();
    let totals: Vec<f64> = mean_abs.iter().map(|row| row.iter().sum()).collect();
    order.sort_by(|&a, &b| totals[b].partial_cmp(&totals[a]).expect("finite"));
    let mut rows = Vec::with_capacity(n_features * n_outputs);
    for &f in &order {
        for c in 0..n_outputs {
            rows.push(SummaryRow {
                class: c,
                feature: report.feature_names[f].clone(),
                mean_abs_phi: mean_abs[f][c],
            });
        }
    }
    rows
}

/// Writes the summary as `class,feature,mean_abs_phi`.
pub fn write_summary_csv(report: &ShapReport, path: &Path) -> Result<(), ExplainError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| ExplainError::Io(format!("{}: {e}", path.display())))?;
    writer
        .write_record(["class", "feature", "mean_abs_phi"])
        .map_err(|e| ExplainError::Io(e.to_string()))?;
    for row in shap_summary(report) {
        writer
            .write_record([
                row.class.to_string(),
                row.feature.clone(),
                row.mean_abs_phi.to_string(),
            ])
            .map_err(|e| ExplainError::Io(e.to_string()))?;
    }
    writer.flush().map_err(|e| ExplainError::Io(e.to_string()))
}

/// Writes every (record, class, feature) attribution with its feature value:
/// `record,class,feature,phi,feature_value`.
pub fn write_swarm_csv(
    report: &ShapReport,
    x: &[Vec<f64>],
    path: &Path,
) -> Result<(), ExplainError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| ExplainError::Io(format!("{}: {e}", path.display())))?;
    writer
        .write_record(["record", "class", "feature", "phi", "feature_value"])
        .map_err(|e| ExplainError::Io(e.to_string()))?;
    for (r, record) in report.phi.iter().enumerate() {
        for (f, row) in record.iter().enumerate() {
            for (c, phi) in row.iter().enumerate() {
                writer
                    .write_record([
                        report.ids[r].clone(),
                        c.to_string(),
                        report.feature_names[f].clone(),
                        phi.to_string(),
                        x[r][f].to_string(),
                    ])
                    .map_err(|e| ExplainError::Io(e.to_string()))?;
            }
        }
    }
    writer.flush().map_err(|e| ExplainError::Io(e.to_string()))
}

/// One dependence-plot point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependencePoint {
    pub feature_value: f64,
    pub phi: f64,
    pub interaction_value: f64,
}

/// Dependence-plot points for `feature` (φ of `class`), colored by the
/// interaction feature's value: one point per record.
pub fn shap_dependence(
    report: &ShapReport,
    x: &[Vec<f64>],
    feature: &str,
    interaction: &str,
    class: usize,
) -> Result<Vec<DependencePoint>, ExplainError> {
    let f = report
        .feature_names
        .iter()
        .position(|n| n == feature)
        .ok_or_else(|| ExplainError::UnknownFeature(feature.to_string()))?;
    let inter = report
        .feature_names
        .iter()
        .position(|n| n == interaction)
        .ok_or_else(|| ExplainError::UnknownFeature(interaction.to_string()))?;
    Ok(report
        .phi
        .iter()
        .zip(x)
        .map(|(record, row)| DependencePoint {
            feature_value: row[f],
            phi: record[f][class],
            interaction_value: row[inter],
        })
        .collect())
}

/// Writes dependence points as `feature_value,phi,interaction_value`; values
/// use shortest-round-trip formatting, so a read-back is lossless.
pub fn write_dependence_csv(points: &[DependencePoint], path: &Path) -> Result<(), ExplainError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| ExplainError::Io(format!("{}: {e}", path.display())))?;
    writer
        .write_record(["feature_value", "phi", "interaction_value"])
        .map_err(|e| ExplainError::Io(e.to_string()))?;
    for p in points {
        writer
            .write_record([
                p.feature_value.to_string(),
                p.phi.to_string(),
                p.interaction_value.to_string(),
            ])
            .map_err(|e| ExplainError::Io(e.to_string()))?;
    }
    writer.flush().map_err(|e| ExplainError::Io(e.to_string()))
}

pub fn read_dependence_csv(path: &Path) -> Result<Vec<DependencePoint>, ExplainError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| ExplainError::Io(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| ExplainError::Io(e.to_string())))
        .collect()
}

/// Force-plot data for one record: base values, per-feature attributions,
/// and the reconstructed output, all on the report's scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceData {
    pub id: String,
    pub scale: ShapScale,
    pub base: Vec<f64>,
    pub features: Vec<ForceFeature>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceFeature {
    pub name: String,
    pub value: f64,
    pub phi: Vec<f64>,
}

pub fn force_data(
    report: &ShapReport,
    x: &[Vec<f64>],
    record: usize,
) -> Result<ForceData, ExplainError> {
    if record >= report.ids.len() {
        return Err(ExplainError::IdCountMismatch {
            expected: report.ids.len(),
            got: record,
        });
    }
    let features = report
        .feature_names
        .iter()
        .enumerate()
        .map(|(f, name)| ForceFeature {
            name: name.clone(),
            value: x[record][f],
            phi: report.phi[record][f].clone(),
        })
        .collect();
    Ok(ForceData {
        id: report.ids[record].clone(),
        scale: report.scale,
        base: report.base.clone(),
        features,
        output: report.outputs[record].clone(),
    })
}

pub fn write_force_json(data: &ForceData, path: &Path) -> Result<(), ExplainError> {
    let json = serde_json::to_string_pretty(data).map_err(|e| ExplainError::Io(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| ExplainError::Io(format!("{}: {e}", path.display())))
}
