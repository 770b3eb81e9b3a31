//! The CART core shared by every tree-based learner.
//!
//! Splitting works on a binned copy of the feature matrix: each feature's
//! distinct values become bins (capped at [`MAX_BINS`], with rank-based cuts
//! beyond that), so a node evaluates a candidate feature with one pass over
//! its rows plus one scan over bins. When a feature has few distinct values
//! the cuts sit exactly at midpoints between consecutive values, which makes
//! the fitter behave identically to exhaustive CART on small data while
//! staying near-linear on survey-sized data.
//!
//! Split selection is fully deterministic: candidate features are scanned in
//! ascending index order and thresholds in ascending order, and only a
//! strictly larger Gini gain displaces the incumbent, so ties resolve to the
//! lowest feature index, then the lowest threshold. Zero-gain splits are
//! admissible when `min_gain` is 0 — a split can be locally useless but
//! enable pure children (the classic XOR arrangement).

use super::{LearnerError, ProbVector};
use crate::model::{ModeLabel, NUM_MODES};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Maximum number of bins per feature; beyond this, cuts are placed at evenly
/// spaced ranks of the distinct values.
pub const MAX_BINS: usize = 255;

/// CART stopping and admissibility parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    /// Maximum depth (root = depth 0); `None` grows until other limits bind.
    pub max_depth: Option<u32>,
    /// Minimum rows in each child of a split.
    pub min_leaf: u32,
    /// Minimum Gini gain for a split to be admissible. The default 0 admits
    /// zero-gain splits.
    pub min_gain: f64,
}

impl Default for TreeParams {
    fn default() -> TreeParams {
        TreeParams {
            max_depth: None,
            min_leaf: 1,
            min_gain: 0.0,
        }
    }
}

/// One node of a classification tree, in the flat node array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` descend left.
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n_samples: u32,
        /// Gini impurity decrease achieved by this split.
        gain: f64,
    },
    Leaf {
        /// Per-mode class distribution; sums to 1.
        dist: ProbVector,
        n_samples: u32,
    },
}

/// A fitted CART classification tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
}

impl TreeModel {
    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbVector, LearnerError> {
        if x.len() != self.n_features {
            return Err(LearnerError::SchemaMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                TreeNode::Leaf { dist, .. } => return Ok(*dist),
            }
        }
    }

    /// Index of the leaf the input falls into.
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                TreeNode::Leaf { .. } => return i,
            }
        }
    }

    /// Depth of the tree (a lone leaf has depth 0).
    pub fn depth(&self) -> u32 {
        fn walk(nodes: &[TreeNode], i: usize) -> u32 {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Internal { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Gini impurity `1 − Σ p_c²` of per-class counts.
pub fn gini(counts: &[u64; NUM_MODES]) -> Result<f64, LearnerError> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(LearnerError::DegenerateNode);
    }
    Ok(gini_of(counts, n as f64))
}

fn gini_of(counts: &[u64; NUM_MODES], n: f64) -> f64 {
    let mut sum_sq = 0.0;
    for &c in counts {
        let p = c as f64 / n;
        sum_sq += p * p;
    }
    1.0 - sum_sq
}

/// Midpoint threshold between two consecutive distinct values.
///
/// On adjacent floats the arithmetic midpoint can round onto `hi`, which
/// would merge the two values; fall back to `lo` (rows with value `lo` still
/// go left under `<=`).
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = (lo + hi) / 2.0;
    if mid >= hi || mid < lo {
        lo
    } else {
        mid
    }
}

/// A feature matrix pre-binned for fast split scans.
///
/// Binning is rank-based on each feature's distinct values, so any strictly
/// monotone transform of a feature leaves the row partition (and therefore
/// the fitted tree's behavior) unchanged.
pub struct BinnedDataset {
    pub n_rows: usize,
    pub n_features: usize,
    /// `bins[feature][row]` — the bin index of a row's value.
    bins: Vec<Vec<u16>>,
    /// `cuts[feature]` — ascending thresholds between adjacent bins.
    cuts: Vec<Vec<f64>>,
}

impl BinnedDataset {
    pub fn build(x: &[Vec<f64>]) -> BinnedDataset {
        let n_rows = x.len();
        let n_features = x.first().map_or(0, Vec::len);
        let mut bins = Vec::with_capacity(n_features);
        let mut cuts_all = Vec::with_capacity(n_features);
        for f in 0..n_features {
            let mut distinct: Vec<f64> = x.iter().map(|row| row[f]).collect();
            distinct.sort_by(|a, b| a.partial_cmp(b).expect("features are never NaN"));
            distinct.dedup();
            let d = distinct.len();
            let mut cuts: Vec<f64> = Vec::new();
            if d <= MAX_BINS {
                cuts.extend(distinct.windows(2).map(|w| midpoint(w[0], w[1])));
            } else {
                for k in 1..MAX_BINS {
                    let idx = k * d / MAX_BINS;
                    if idx == 0 || idx >= d {
                        continue;
                    }
                    let cut = midpoint(distinct[idx - 1], distinct[idx]);
                    if cuts.last() != Some(&cut) {
                        cuts.push(cut);
                    }
                }
            }
            let row_bins: Vec<u16> = x
                .iter()
                .map(|row| cuts.partition_point(|&c| c < row[f]) as u16)
                .collect();
            bins.push(row_bins);
            cuts_all.push(cuts);
        }
        BinnedDataset {
            n_rows,
            n_features,
            bins,
            cuts: cuts_all,
        }
    }
}

/// Picks the candidate feature set for one node: all features, or a sorted
/// without-replacement sample of `k`.
fn candidate_features(
    n_features: usize,
    subsample: Option<usize>,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Vec<usize> {
    match (subsample, rng) {
        (Some(k), Some(rng)) if k < n_features => {
            let mut picked = rand::seq::index::sample(*rng, n_features, k).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..n_features).collect(),
    }
}

struct ClsContext<'a> {
    data: &'a BinnedDataset,
    y: &'a [u8],
    params: TreeParams,
    subsample: Option<usize>,
    /// Per-bin class-count scratch, reused across nodes.
    scratch: Vec<[u64; NUM_MODES]>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    cut_index: usize,
}

impl ClsContext<'_> {
    /// Finds the best admissible split of `rows`, or `None`.
    fn best_split(
        &mut self,
        rows: &[u32],
        counts: &[u64; NUM_MODES],
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Option<BestSplit> {
        let n = rows.len();
        let min_leaf = self.params.min_leaf as usize;
        if n < 2 * min_leaf {
            return None;
        }
        let parent_impurity = gini_of(counts, n as f64);
        let mut best: Option<BestSplit> = None;
        for f in candidate_features(self.data.n_features, self.subsample, rng) {
            let cuts = &self.data.cuts[f];
            if cuts.is_empty() {
                continue;
            }
            let n_bins = cuts.len() + 1;
            let fbins = &self.data.bins[f];
            // The sweep below reads every bin, so every bin must be zeroed —
            // bins untouched by this node's rows would otherwise leak counts
            // from the previous feature or node.
            self.scratch[..n_bins].fill([0; NUM_MODES]);
            for &r in rows {
                let r = r as usize;
                self.scratch[fbins[r] as usize][self.y[r] as usize] += 1;
            }
            let mut left = [0u64; NUM_MODES];
            let mut n_left = 0usize;
            for (cut_index, _) in cuts.iter().enumerate() {
                for (l, b) in left.iter_mut().zip(&self.scratch[cut_index]) {
                    *l += b;
                }
                n_left += self.scratch[cut_index].iter().sum::<u64>() as usize;
                if n_left < min_leaf {
                    continue;
                }
                let n_right = n - n_left;
                if n_right < min_leaf {
                    break;
                }
                let mut right = [0u64; NUM_MODES];
                for ((r, c), l) in right.iter_mut().zip(counts).zip(&left) {
                    *r = c - l;
                }
                let gain = parent_impurity
                    - (n_left as f64 / n as f64) * gini_of(&left, n_left as f64)
                    - (n_right as f64 / n as f64) * gini_of(&right, n_right as f64);
                if gain >= self.params.min_gain && best.as_ref().map_or(true, |b| gain > b.gain) {
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        cut_index,
                    });
                }
            }
        }
        best
    }
}

fn class_counts(rows: &[u32], y: &[u8]) -> [u64; NUM_MODES] {
    let mut counts = [0u64; NUM_MODES];
    for &r in rows {
        counts[y[r as usize] as usize] += 1;
    }
    counts
}

fn leaf_from_counts(counts: &[u64; NUM_MODES], n: usize) -> TreeNode {
    let mut dist = [0.0; NUM_MODES];
    for (d, &c) in dist.iter_mut().zip(counts) {
        *d = c as f64 / n as f64;
    }
    TreeNode::Leaf {
        dist,
        n_samples: n as u32,
    }
}

/// Work item for the explicit build stack: rows to fit, their depth, and the
/// parent slot to patch with this node's index.
struct WorkItem {
    rows: Vec<u32>,
    depth: u32,
    parent: Option<(usize, bool)>, // (node index, is_left_child)
}

/// Fits a classification tree on pre-binned data over a row subset.
///
/// `subsample` with an rng enables per-node candidate-feature sampling
/// (random-forest behavior). Uses an explicit stack, so admissible zero-gain
/// chains cannot overflow the call stack.
pub(crate) fn fit_classification_tree(
    data: &BinnedDataset,
    rows: Vec<u32>,
    y: &[u8],
    params: &TreeParams,
    subsample: Option<usize>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> TreeModel {
    let mut ctx = ClsContext {
        data,
        y,
        params: *params,
        subsample,
        scratch: vec![[0; NUM_MODES]; MAX_BINS + 1],
    };
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut stack = vec![WorkItem {
        rows,
        depth: 0,
        parent: None,
    }];
    while let Some(item) = stack.pop() {
        let n = item.rows.len();
        let counts = class_counts(&item.rows, y);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = ctx
            .params
            .max_depth
            .map_or(false, |max| item.depth >= max);
        let split = if pure || depth_capped {
            None
        } else {
            ctx.best_split(&item.rows, &counts, &mut rng)
        };
        let node_index = nodes.len();
        if let Some((parent, is_left)) = item.parent {
            if let TreeNode::Internal { left, right, .. } = &mut nodes[parent] {
                if is_left {
                    *left = node_index;
                } else {
                    *right = node_index;
                }
            }
        }
        match split {
            None => nodes.push(leaf_from_counts(&counts, n)),
            Some(split) => {
                let fbins = &data.bins[split.feature];
                let threshold = data.cuts[split.feature][split.cut_index];
                let (mut left_rows, mut right_rows) = (Vec::new(), Vec::new());
                for &r in &item.rows {
                    if (fbins[r as usize] as usize) <= split.cut_index {
                        left_rows.push(r);
                    } else {
                        right_rows.push(r);
                    }
                }
                nodes.push(TreeNode::Internal {
                    feature: split.feature,
                    threshold,
                    left: usize::MAX, // patched when the child is created
                    right: usize::MAX,
                    n_samples: n as u32,
                    gain: split.gain,
                });
                // Push right first so the left child is processed (and
                // allocated) first — matches plain depth-first recursion.
                stack.push(WorkItem {
                    rows: right_rows,
                    depth: item.depth + 1,
                    parent: Some((node_index, false)),
                });
                stack.push(WorkItem {
                    rows: left_rows,
                    depth: item.depth + 1,
                    parent: Some((node_index, true)),
                });
            }
        }
    }
    TreeModel {
        nodes,
        n_features: data.n_features,
    }
}

/// Fits a CART classification tree by exhaustive threshold search.
pub fn fit_tree(x: &[Vec<f64>], y: &[ModeLabel], params: &TreeParams) -> Result<TreeModel, LearnerError> {
    super::check_training_set(x, y)?;
    let data = BinnedDataset::build(x);
    let y: Vec<u8> = y.iter().map(|m| m.index() as u8).collect();
    let rows: Vec<u32> = (0..x.len() as u32).collect();
    Ok(fit_classification_tree(&data, rows, &y, params, None, None))
}

/// Fits an extremely randomized classification tree: every candidate feature
/// gets exactly one uniformly drawn threshold between its node-local min and
/// max, and the best of those candidates wins.
pub(crate) fn fit_extra_tree(
    x: &[Vec<f64>],
    rows: Vec<u32>,
    y: &[u8],
    params: &TreeParams,
    subsample: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> TreeModel {
    use rand::Rng;
    let n_features = x.first().map_or(0, Vec::len);
    let min_leaf = params.min_leaf as usize;
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut stack = vec![WorkItem {
        rows,
        depth: 0,
        parent: None,
    }];
    while let Some(item) = stack.pop() {
        let n = item.rows.len();
        let counts = class_counts(&item.rows, y);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = params.max_depth.map_or(false, |max| item.depth >= max);
        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        if !pure && !depth_capped && n >= 2 * min_leaf {
            let parent_impurity = gini_of(&counts, n as f64);
            let mut rng_opt = Some(&mut *rng);
            for f in candidate_features(n_features, subsample, &mut rng_opt) {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &r in &item.rows {
                    let v = x[r as usize][f];
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                if !(lo < hi) {
                    continue;
                }
                let threshold = rng.gen_range(lo..hi);
                let mut left = [0u64; NUM_MODES];
                let mut n_left = 0usize;
                for &r in &item.rows {
                    if x[r as usize][f] <= threshold {
                        left[y[r as usize] as usize] += 1;
                        n_left += 1;
                    }
                }
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let mut right = [0u64; NUM_MODES];
                for ((r, c), l) in right.iter_mut().zip(&counts).zip(&left) {
                    *r = c - l;
                }
                let gain = parent_impurity
                    - (n_left as f64 / n as f64) * gini_of(&left, n_left as f64)
                    - (n_right as f64 / n as f64) * gini_of(&right, n_right as f64);
                if gain >= params.min_gain && best.as_ref().map_or(true, |b| gain > b.0) {
                    best = Some((gain, f, threshold));
                }
            }
        }
        let node_index = nodes.len();
        if let Some((parent, is_left)) = item.parent {
            if let TreeNode::Internal { left, right, .. } = &mut nodes[parent] {
                if is_left {
                    *left = node_index;
                } else {
                    *right = node_index;
                }
            }
        }
        match best {
            None => nodes.push(leaf_from_counts(&counts, n)),
            Some((gain, feature, threshold)) => {
                let (mut left_rows, mut right_rows) = (Vec::new(), Vec::new());
                for &r in &item.rows {
                    if x[r as usize][feature] <= threshold {
                        left_rows.push(r);
                    } else {
                        right_rows.push(r);
                    }
                }
                nodes.push(TreeNode::Internal {
                    feature,
                    threshold,
                    left: usize::MAX,
                    right: usize::MAX,
                    n_samples: n as u32,
                    gain,
                });
                stack.push(WorkItem {
                    rows: right_rows,
                    depth: item.depth + 1,
                    parent: Some((node_index, false)),
                });
                stack.push(WorkItem {
                    rows: left_rows,
                    depth: item.depth + 1,
                    parent: Some((node_index, true)),
                });
            }
        }
    }
    TreeModel {
        nodes,
        n_features,
    }
}

/// One node of a regression tree (used per class by the booster).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RegressionNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n_samples: u32,
        /// Newton gain achieved by this split.
        gain: f64,
    },
    Leaf {
        value: f64,
        n_samples: u32,
    },
}

/// A fitted regression tree on gradient/hessian statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTreeModel {
    pub nodes: Vec<RegressionNode>,
    pub n_features: usize,
}

impl RegressionTreeModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                RegressionNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                RegressionNode::Leaf { value, .. } => return *value,
            }
        }
    }
}

/// Parameters of the Newton regression-tree fit.
pub(crate) struct RegressionParams {
    pub max_depth: u32,
    pub min_leaf: usize,
    pub lambda: f64,
    /// A split must strictly exceed this Newton gain; 0 rejects useless
    /// splits because the comparison is strict.
    pub min_split_gain: f64,
}

fn newton_leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom <= 1e-16 {
        0.0
    } else {
        -g / denom
    }
}

/// Half the score improvement of splitting (G,H) into (Gl,Hl) and (Gr,Hr).
fn newton_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let term = |g: f64, h: f64| {
        let denom = h + lambda;
        if denom <= 1e-16 {
            0.0
        } else {
            g * g / denom
        }
    };
    0.5 * (term(gl, hl) + term(gr, hr) - term(gl + gr, hl + hr))
}

/// Fits one regression tree on per-row gradients and hessians over a row
/// subset of pre-binned data.
pub(crate) fn fit_regression_tree(
    data: &BinnedDataset,
    rows: Vec<u32>,
    grad: &[f64],
    hess: &[f64],
    params: &RegressionParams,
    subsample: Option<usize>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> RegressionTreeModel {
    // Per-bin (gradient sum, hessian sum, row count) scratch.
    let mut scratch: Vec<(f64, f64, u32)> = vec![(0.0, 0.0, 0); MAX_BINS + 1];
    let mut nodes: Vec<RegressionNode> = Vec::new();
    let mut stack = vec![WorkItem {
        rows,
        depth: 0,
        parent: None,
    }];
    while let Some(item) = stack.pop() {
        let n = item.rows.len();
        let mut g_total = 0.0;
        let mut h_total = 0.0;
        for &r in &item.rows {
            g_total += grad[r as usize];
            h_total += hess[r as usize];
        }
        let mut best: Option<(f64, usize, usize)> = None; // (gain, feature, cut)
        if item.depth < params.max_depth && n >= 2 * params.min_leaf {
            for f in candidate_features(data.n_features, subsample, &mut rng) {
                let cuts = &data.cuts[f];
                if cuts.is_empty() {
                    continue;
                }
                let n_bins = cuts.len() + 1;
                let fbins = &data.bins[f];
                // Every bin participates in the sweep, so every bin must be
                // zeroed; skipping untouched ones would leak sums from the
                // previous feature or node.
                scratch[..n_bins].fill((0.0, 0.0, 0));
                for &r in &item.rows {
                    let r = r as usize;
                    let slot = &mut scratch[fbins[r] as usize];
                    slot.0 += grad[r];
                    slot.1 += hess[r];
                    slot.2 += 1;
                }
                let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
                for (cut_index, _) in cuts.iter().enumerate() {
                    let (g, h, c) = scratch[cut_index];
                    gl += g;
                    hl += h;
                    nl += c as usize;
                    if nl < params.min_leaf {
                        continue;
                    }
                    let nr = n - nl;
                    if nr < params.min_leaf {
                        break;
                    }
                    let gain = newton_gain(gl, hl, g_total - gl, h_total - hl, params.lambda);
                    if gain > params.min_split_gain && best.as_ref().map_or(true, |b| gain > b.0) {
                        best = Some((gain, f, cut_index));
                    }
                }
            }
        }
        let node_index = nodes.len();
        if let Some((parent, is_left)) = item.parent {
            if let RegressionNode::Internal { left, right, .. } = &mut nodes[parent] {
                if is_left {
                    *left = node_index;
                } else {
                    *right = node_index;
                }
            }
        }
        match best {
            None => nodes.push(RegressionNode::Leaf {
                value: newton_leaf_value(g_total, h_total, params.lambda),
                n_samples: n as u32,
            }),
            Some((gain, feature, cut_index)) => {
                let fbins = &data.bins[feature];
                let threshold = data.cuts[feature][cut_index];
                let (mut left_rows, mut right_rows) = (Vec::new(), Vec::new());
                for &r in &item.rows {
                    if (fbins[r as usize] as usize) <= cut_index {
                        left_rows.push(r);
                    } else {
                        right_rows.push(r);
                    }
                }
                nodes.push(RegressionNode::Internal {
                    feature,
                    threshold,
                    left: usize::MAX,
                    right: usize::MAX,
                    n_samples: n as u32,
                    gain,
                });
                stack.push(WorkItem {
                    rows: right_rows,
                    depth: item.depth + 1,
                    parent: Some((node_index, false)),
                });
                stack.push(WorkItem {
                    rows: left_rows,
                    depth: item.depth + 1,
                    parent: Some((node_index, true)),
                });
            }
        }
    }
    RegressionTreeModel {
        nodes,
        n_features: data.n_features,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::argmax_mode;
    use crate::model::ModeLabel::{Air, ForHireTruck, Parcel, PrivateTruck};

    fn labels(spec: &[(ModeLabel, usize)]) -> Vec<ModeLabel> {
        spec.iter()
            .flat_map(|&(m, k)| std::iter::repeat(m).take(k))
            .collect()
    }

    use crate::model::ModeLabel;

    #[test]
    fn gini_matches_hand_values() {
        assert_eq!(gini(&[4, 0, 0, 0, 0]).unwrap(), 0.0);
        assert_eq!(gini(&[2, 2, 0, 0, 0]).unwrap(), 0.5);
        assert!((gini(&[1, 1, 1, 1, 1]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(gini(&[0; 5]), Err(LearnerError::DegenerateNode));
    }

    #[test]
    fn pure_input_yields_single_indicator_leaf() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let y = labels(&[(Parcel, 3)]);
        let tree = fit_tree(&x, &y, &TreeParams::default()).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        let p = tree.predict_proba(&[9.0]).unwrap();
        assert_eq!(p, [0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn four_point_line_splits_at_midpoint() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        let y = labels(&[(ForHireTruck, 2), (PrivateTruck, 2)]);
        let tree = fit_tree(&x, &y, &TreeParams::default()).unwrap();
        match &tree.nodes[0] {
            TreeNode::Internal {
                feature, threshold, ..
            } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 2.5);
            }
            other => panic!("expected a root split, got {other:?}"),
        }
        // Both children are pure.
        for (v, want) in [(1.0, ForHireTruck), (2.0, ForHireTruck), (3.0, PrivateTruck), (4.0, PrivateTruck)] {
            let p = tree.predict_proba(&[v]).unwrap();
            assert_eq!(argmax_mode(&p), want);
            assert_eq!(p[want.index()], 1.0);
        }
    }

    #[test]
    fn xor_is_learnable_at_depth_two() {
        let x = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let y = vec![ForHireTruck, PrivateTruck, PrivateTruck, ForHireTruck];
        let params = TreeParams {
            max_depth: Some(2),
            ..TreeParams::default()
        };
        let tree = fit_tree(&x, &y, &params).unwrap();
        for (row, label) in x.iter().zip(&y) {
            assert_eq!(argmax_mode(&tree.predict_proba(row).unwrap()), *label);
        }
        // The root split necessarily has zero Gini gain; the tie-break picks
        // the lowest feature index.
        match &tree.nodes[0] {
            TreeNode::Internal { feature, gain, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*gain, 0.0);
            }
            other => panic!("expected a root split, got {other:?}"),
        }
    }

    #[test]
    fn min_gain_disables_zero_gain_splits() {
        let x = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let y = vec![ForHireTruck, PrivateTruck, PrivateTruck, ForHireTruck];
        let params = TreeParams {
            max_depth: Some(2),
            min_gain: 1e-9,
            ..TreeParams::default()
        };
        // With a positive min_gain, no admissible root split exists.
        let tree = fit_tree(&x, &y, &params).unwrap();
        assert_eq!(tree.nodes.len(), 1);
    }

    #[test]
    fn conflicting_duplicate_rows_become_a_mixture_leaf() {
        let x = vec![vec![1.0, 2.0]; 4];
        let y = vec![ForHireTruck, ForHireTruck, PrivateTruck, Air];
        let tree = fit_tree(&x, &y, &TreeParams::default()).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        let p = tree.predict_proba(&[1.0, 2.0]).unwrap();
        assert_eq!(p, [0.5, 0.25, 0.0, 0.25, 0.0]);
    }

    #[test]
    fn min_leaf_is_respected() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y = labels(&[(ForHireTruck, 9), (PrivateTruck, 1)]);
        let params = TreeParams {
            min_leaf: 3,
            ..TreeParams::default()
        };
        let tree = fit_tree(&x, &y, &params).unwrap();
        fn check(nodes: &[TreeNode], i: usize, min: u32) {
            match &nodes[i] {
                TreeNode::Leaf { n_samples, .. } => assert!(*n_samples >= min),
                TreeNode::Internal { left, right, .. } => {
                    check(nodes, *left, min);
                    check(nodes, *right, min);
                }
            }
        }
        check(&tree.nodes, 0, 3);
    }

    #[test]
    fn schema_mismatch_is_detected() {
        let x = vec![vec![1.0, 2.0]];
        let y = labels(&[(ForHireTruck, 1)]);
        let tree = fit_tree(&x, &y, &TreeParams::default()).unwrap();
        assert_eq!(
            tree.predict_proba(&[1.0]),
            Err(LearnerError::SchemaMismatch {
                expected: 2,
                got: 1
            })
        );
    }

    #[test]
    fn tie_break_prefers_lowest_feature_then_lowest_threshold() {
        // Both features separate the classes perfectly; feature 0 must win.
        let x = vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![3.0, 3.0],
        ];
        let y = labels(&[(ForHireTruck, 2), (PrivateTruck, 2)]);
        let tree = fit_tree(&x, &y, &TreeParams::default()).unwrap();
        match &tree.nodes[0] {
            TreeNode::Internal {
                feature, threshold, ..
            } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 1.5);
            }
            other => panic!("expected split, got {other:?}"),
        }
    }

    #[test]
    fn monotone_transform_of_a_feature_preserves_predictions() {
        // 60 rows, two informative features with interleaved noise values.
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..60 {
            let a = (i % 10) as f64;
            let b = ((i * 7) % 13) as f64;
            x.push(vec![a, b]);
            y.push(if a + 0.3 * b > 6.0 { PrivateTruck } else { ForHireTruck });
        }
        let cube = |v: f64| v * v * v;
        let x_t: Vec<Vec<f64>> = x.iter().map(|r| vec![cube(r[0]), r[1]]).collect();
        let params = TreeParams {
            min_leaf: 2,
            ..TreeParams::default()
        };
        let tree_a = fit_tree(&x, &y, &params).unwrap();
        let tree_b = fit_tree(&x_t, &y, &params).unwrap();
        for (row, row_t) in x.iter().zip(&x_t) {
            assert_eq!(
                tree_a.predict_proba(row).unwrap(),
                tree_b.predict_proba(row_t).unwrap()
            );
        }
    }

    #[test]
    fn binning_caps_distinct_values_without_losing_order() {
        // 1000 distinct values exceed MAX_BINS; the tree still separates the
        // halves because cuts are rank-based.
        let x: Vec<Vec<f64>> = (0..1000).map(|i| vec![(i as f64).exp2().min(1e300)]).collect();
        let y: Vec<ModeLabel> = (0..1000)
            .map(|i| if i < 500 { ForHireTruck } else { PrivateTruck })
            .collect();
        let tree = fit_tree(&x, &y, &TreeParams::default()).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(row, label)| argmax_mode(&tree.predict_proba(row).unwrap()) == **label)
            .count();
        assert!(correct as f64 / 1000.0 > 0.99);
    }

    #[test]
    fn regression_tree_fits_constant_leaves() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let data = BinnedDataset::build(&x);
        let grad = vec![-1.0, -1.0, 1.0, 1.0];
        let hess = vec![1.0; 4];
        let params = RegressionParams {
            max_depth: 3,
            min_leaf: 1,
            lambda: 0.0,
            min_split_gain: 0.0,
        };
        let tree = fit_regression_tree(&data, vec![0, 1, 2, 3], &grad, &hess, &params, None, None);
        // Perfect split at 1.5: leaves -G/H = 1 and -1.
        assert_eq!(tree.predict(&[0.0]), 1.0);
        assert_eq!(tree.predict(&[3.0]), -1.0);
    }

    #[test]
    fn regression_gain_matches_hand_computation() {
        // G_l=-2,H_l=2 ; G_r=2,H_r=2 ; λ=1 → 0.5(4/3 + 4/3 − 0) = 4/3.
        assert!((newton_gain(-2.0, 2.0, 2.0, 2.0, 1.0) - 4.0 / 3.0).abs() < 1e-12);
        // Leaf value −G/(H+λ).
        assert_eq!(newton_leaf_value(-2.0, 2.0, 1.0), 2.0 / 3.0);
    }
}
