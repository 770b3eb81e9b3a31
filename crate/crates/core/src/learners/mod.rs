//! Level-1 classifiers, implemented from scratch.
//!
//! All learners consume dense feature vectors (see `features`) and emit a
//! five-entry probability vector, one entry per mode. Tree-based learners
//! share one CART core ([`tree`]); [`forest`] builds bootstrap/random
//! ensembles on top of it, [`boosted`] builds a Newton-boosted softmax
//! ensemble, and [`baseline`] holds the non-tree reference models
//! (multinomial logistic, naive Bayes, k-nearest-neighbors).
//!
//! Fitting is deterministic: the same spec, data, and seed reproduce
//! bit-identical models.

pub mod baseline;
pub mod boosted;
pub mod forest;
pub mod tree;

use crate::model::{ModeLabel, NUM_MODES};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baseline::{KnnParams, LogisticParams, NaiveBayesParams};
pub use boosted::{fit_boosted, BoostedModel, BoostedParams};
pub use forest::{fit_forest, FeatureSubsample, ForestModel, ForestParams, ForestVariant};
pub use tree::{
    fit_tree, gini, RegressionNode, RegressionTreeModel, TreeModel, TreeNode, TreeParams,
};

/// Per-mode probabilities, indexed by [`ModeLabel::index`]. Entries are in
/// [0,1] and sum to 1 within 1e-9.
pub type ProbVector = [f64; NUM_MODES];

/// Hard label from a probability vector; ties go to the lowest mode index.
pub fn argmax_mode(p: &ProbVector) -> ModeLabel {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    ModeLabel::from_index(best).expect("index < NUM_MODES")
}

/// Numerically stable softmax over per-class scores.
pub fn softmax(scores: &[f64; NUM_MODES]) -> ProbVector {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_MODES];
    let mut total = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        total += *o;
    }
    for o in &mut out {
        *o /= total;
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LearnerError {
    #[error("cannot fit on an empty training set")]
    EmptyTrainingSet,
    #[error("feature matrix has {rows} rows but {labels} labels")]
    LabelMismatch { rows: usize, labels: usize },
    #[error("input has {got} features but the model was fit with {expected}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("class counts are all zero")]
    DegenerateNode,
    #[error("k = {k} is invalid for {n} training rows")]
    InvalidK { k: usize, n: usize },
    #[error("{0} is not a supported learner")]
    UnsupportedLearner(String),
}

/// A learner recipe: which algorithm plus its hyperparameters.
///
/// Specs are what configs and the stacking roster name; [`fit_learner`] turns
/// a spec into a [`LearnerModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LearnerSpec {
    DecisionTree(TreeParams),
    Forest(ForestParams),
    Boosted(BoostedParams),
    Logistic(LogisticParams),
    NaiveBayes(NaiveBayesParams),
    Knn(KnnParams),
}

impl LearnerSpec {
    /// Canonical short name used in reports and artifact paths.
    pub fn short_name(&self) -> String {
        match self {
            LearnerSpec::DecisionTree(_) => "dt".to_string(),
            LearnerSpec::Forest(p) => match p.variant {
                ForestVariant::RandomForest => "rf".to_string(),
                ForestVariant::Bagging => "bag".to_string(),
                ForestVariant::ExtraTrees => "extra".to_string(),
            },
            LearnerSpec::Boosted(_) => "boost".to_string(),
            LearnerSpec::Logistic(_) => "mnl".to_string(),
            LearnerSpec::NaiveBayes(_) => "nb".to_string(),
            LearnerSpec::Knn(_) => "knn".to_string(),
        }
    }

    /// Parses a learner name as used by configs and the CLI.
    ///
    /// Names we deliberately do not implement ("svm", "mlp", "ada") get a
    /// dedicated unsupported-learner error rather than an unknown-name one.
    pub fn from_name(name: &str) -> Result<LearnerSpec, LearnerError> {
        match name.to_ascii_lowercase().as_str() {
            "dt" | "tree" => Ok(LearnerSpec::DecisionTree(TreeParams::default())),
            "rf" => Ok(LearnerSpec::Forest(ForestParams::for_variant(
                ForestVariant::RandomForest,
            ))),
            "bag" => Ok(LearnerSpec::Forest(ForestParams::for_variant(
                ForestVariant::Bagging,
            ))),
            "extra" => Ok(LearnerSpec::Forest(ForestParams::for_variant(
                ForestVariant::ExtraTrees,
            ))),
            "boost" | "gb" | "xgb" => Ok(LearnerSpec::Boosted(BoostedParams::default())),
            "mnl" | "lr" | "logistic" => Ok(LearnerSpec::Logistic(LogisticParams::default())),
            "nb" => Ok(LearnerSpec::NaiveBayes(NaiveBayesParams::default())),
            "knn" => Ok(LearnerSpec::Knn(KnnParams::default())),
            other => Err(LearnerError::UnsupportedLearner(other.to_string())),
        }
    }
}

/// A fitted model of any supported kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LearnerModel {
    DecisionTree(TreeModel),
    Forest(ForestModel),
    Boosted(BoostedModel),
    Logistic(baseline::LogisticModel),
    NaiveBayes(baseline::NaiveBayesModel),
    Knn(baseline::KnnModel),
}

impl LearnerModel {
    /// Number of features the model was fit with.
    pub fn n_features(&self) -> usize {
        match self {
            LearnerModel::DecisionTree(m) => m.n_features,
            LearnerModel::Forest(m) => m.n_features,
            LearnerModel::Boosted(m) => m.n_features,
            LearnerModel::Logistic(m) => m.n_features(),
            LearnerModel::NaiveBayes(m) => m.n_features(),
            LearnerModel::Knn(m) => m.n_features(),
        }
    }

    /// Five-class probability prediction for one feature vector.
    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbVector, LearnerError> {
        match self {
            LearnerModel::DecisionTree(m) => m.predict_proba(x),
            LearnerModel::Forest(m) => m.predict_proba(x),
            LearnerModel::Boosted(m) => m.predict_proba(x),
            LearnerModel::Logistic(m) => m.predict_proba(x),
            LearnerModel::NaiveBayes(m) => m.predict_proba(x),
            LearnerModel::Knn(m) => m.predict_proba(x),
        }
    }

    /// Probability predictions for a batch of rows, in input order.
    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<ProbVector>, LearnerError> {
        xs.iter().map(|x| self.predict_proba(x)).collect()
    }

    /// Hard label prediction (argmax, ties to lowest mode index).
    pub fn predict_label(&self, x: &[f64]) -> Result<ModeLabel, LearnerError> {
        Ok(argmax_mode(&self.predict_proba(x)?))
    }
}

/// Checks the (X, y) shape every fit shares.
fn check_training_set(x: &[Vec<f64>], y: &[ModeLabel]) -> Result<(), LearnerError> {
    if x.is_empty() {
        return Err(LearnerError::EmptyTrainingSet);
    }
    if x.len() != y.len() {
        return Err(LearnerError::LabelMismatch {
            rows: x.len(),
            labels: y.len(),
        });
    }
    Ok(())
}

/// Fits a learner spec on a feature matrix.
pub fn fit_learner(
    spec: &LearnerSpec,
    x: &[Vec<f64>],
    y: &[ModeLabel],
    seed: u64,
) -> Result<LearnerModel, LearnerError> {
    check_training_set(x, y)?;
    Ok(match spec {
        LearnerSpec::DecisionTree(params) => LearnerModel::DecisionTree(tree::fit_tree(x, y, params)?),
        LearnerSpec::Forest(params) => LearnerModel::Forest(forest::fit_forest(x, y, params, seed)?),
        LearnerSpec::Boosted(params) => LearnerModel::Boosted(boosted::fit_boosted(x, y, params, seed)?),
        LearnerSpec::Logistic(params) => LearnerModel::Logistic(baseline::fit_logistic(x, y, params)?),
        LearnerSpec::NaiveBayes(params) => {
            LearnerModel::NaiveBayes(baseline::fit_naive_bayes(x, y, params)?)
        }
        LearnerSpec::Knn(params) => LearnerModel::Knn(baseline::fit_knn(x, y, params)?),
    })
}
