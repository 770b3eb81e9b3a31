//! Newton-boosted softmax tree ensemble.
//!
//! Each round fits one regression tree per class on the softmax objective's
//! gradient (`p − y`) and hessian (`p(1−p)`); leaf values are the Newton step
//! `−ΣG/(ΣH+λ)`. The model's raw score for class `c` is the class log-prior
//! plus the learning-rate-scaled sum of its trees, and probabilities are the
//! softmax of those scores. The same booster serves both as a level-1 learner
//! and as the level-2 stacking meta-learner.

use super::tree::{fit_regression_tree, BinnedDataset, RegressionParams, RegressionTreeModel};
use super::{softmax, LearnerError, ProbVector};
use crate::model::{ModeLabel, NUM_MODES};
use crate::rng::rng_for;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostedParams {
    pub n_rounds: u32,
    /// Shrinkage per round. Zero is permitted — the model then predicts the
    /// class priors for every input.
    pub learning_rate: f64,
    pub max_depth: u32,
    /// L2 regularization on leaf values.
    pub lambda: f64,
    pub min_leaf: u32,
    /// Candidate features per split; `None` scans all. Subsampling mainly
    /// serves the stacking meta-learner, where it cuts fit time on wide
    /// meta-feature blocks.
    pub feature_subsample: Option<u32>,
}

impl Default for BoostedParams {
    fn default() -> BoostedParams {
        BoostedParams {
            n_rounds: 200,
            learning_rate: 0.1,
            max_depth: 6,
            lambda: 1.0,
            min_leaf: 1,
            feature_subsample: None,
        }
    }
}

/// A fitted boosted ensemble: `trees[round][class]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub base_scores: [f64; NUM_MODES],
    pub trees: Vec<Vec<RegressionTreeModel>>,
    pub learning_rate: f64,
    pub lambda: f64,
    pub n_features: usize,
    /// Mean training log-loss after each round.
    pub training_loss: Vec<f64>,
}

impl BoostedModel {
    /// Raw (margin-scale) per-class scores before the softmax.
    pub fn predict_margin(&self, x: &[f64]) -> Result<[f64; NUM_MODES], LearnerError> {
        if x.len() != self.n_features {
            return Err(LearnerError::SchemaMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut scores = self.base_scores;
        for round in &self.trees {
            for (c, tree) in round.iter().enumerate() {
                scores[c] += self.learning_rate * tree.predict(x);
            }
        }
        Ok(scores)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbVector, LearnerError> {
        Ok(softmax(&self.predict_margin(x)?))
    }
}

/// Class log-priors with a small-count floor so absent classes stay finite.
fn base_scores(y: &[ModeLabel]) -> [f64; NUM_MODES] {
    let n = y.len() as f64;
    let mut counts = [0.0f64; NUM_MODES];
    for m in y {
        counts[m.index()] += 1.0;
    }
    std::array::from_fn(|c| (counts[c].max(0.5) / n).ln())
}

fn mean_log_loss(scores: &[[f64; NUM_MODES]], y: &[ModeLabel]) -> f64 {
    let mut total = 0.0;
    for (s, m) in scores.iter().zip(y) {
        let p = softmax(s);
        total -= p[m.index()].max(1e-15).ln();
    }
    total / y.len() as f64
}

/// Fits a Newton-boosted softmax ensemble.
pub fn fit_boosted(
    x: &[Vec<f64>],
    y: &[ModeLabel],
    params: &BoostedParams,
    seed: u64,
) -> Result<BoostedModel, LearnerError> {
    super::check_training_set(x, y)?;
    if params.learning_rate < 0.0 {
        return Err(LearnerError::UnsupportedLearner(
            "boosted learning_rate must be ≥ 0".to_string(),
        ));
    }
    let n = x.len();
    let n_features = x[0].len();
    let binned = BinnedDataset::build(x);
    let all_rows: Vec<u32> = (0..n as u32).collect();
    let base = base_scores(y);
    let mut scores: Vec<[f64; NUM_MODES]> = vec![base; n];
    let y_index: Vec<usize> = y.iter().map(|m| m.index()).collect();

    let reg_params = RegressionParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf as usize,
        lambda: params.lambda,
        min_split_gain: 0.0,
    };
    let subsample = params
        .feature_subsample
        .map(|k| (k as usize).clamp(1, n_features))
        .filter(|&k| k < n_features);

    let mut trees: Vec<Vec<RegressionTreeModel>> = Vec::with_capacity(params.n_rounds as usize);
    let mut training_loss = Vec::with_capacity(params.n_rounds as usize);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for round in 0..params.n_rounds {
        // One probability snapshot per round, shared by all five class trees.
        let probs: Vec<ProbVector> = scores.iter().map(softmax).collect();
        let mut round_trees = Vec::with_capacity(NUM_MODES);
        for c in 0..NUM_MODES {
            for i in 0..n {
                let p = probs[i][c];
                let target = if y_index[i] == c { 1.0 } else { 0.0 };
                grad[i] = p - target;
                hess[i] = p * (1.0 - p);
            }
            let mut rng = rng_for(seed, "boost", round as u64 * NUM_MODES as u64 + c as u64);
            let rng_opt = subsample.map(|_| &mut rng);
            let tree = fit_regression_tree(
                &binned,
                all_rows.clone(),
                &grad,
                &hess,
                &reg_params,
                subsample,
                rng_opt,
            );
            for (i, row) in x.iter().enumerate() {
                scores[i][c] += params.learning_rate * tree.predict(row);
            }
            round_trees.push(tree);
        }
        trees.push(round_trees);
        training_loss.push(mean_log_loss(&scores, y));
    }
    Ok(BoostedModel {
        base_scores: base,
        trees,
        learning_rate: params.learning_rate,
        lambda: params.lambda,
        n_features,
        training_loss,
    })
}
