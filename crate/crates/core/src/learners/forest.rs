//! Tree ensembles: random forest, bagged trees, and extremely randomized
//! trees.
//!
//! All three share the CART core and differ only in where randomness enters:
//!
//! * random forest — bootstrap rows, random candidate-feature subset per
//!   split (√F by default);
//! * bagging — bootstrap rows, every feature considered at every split;
//! * extra trees — no bootstrap, random candidate subset, and one uniformly
//!   random threshold per candidate feature instead of an exhaustive scan.
//!
//! Each tree draws its own seed from `(seed, "tree", index)`, so forests are
//! reproducible regardless of fitting order.

use super::tree::{self, BinnedDataset, TreeModel, TreeParams};
use super::{LearnerError, ProbVector};
use crate::model::{ModeLabel, NUM_MODES};
use crate::rng::rng_for;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which ensemble recipe to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForestVariant {
    RandomForest,
    Bagging,
    ExtraTrees,
}

/// How many candidate features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSubsample {
    /// Every feature.
    All,
    /// ⌊√F⌋, the usual forest default.
    Sqrt,
    /// A fixed count (clamped to F).
    Count(usize),
}

impl FeatureSubsample {
    /// Resolves to a concrete candidate count, `None` meaning all features.
    fn resolve(self, n_features: usize) -> Option<usize> {
        match self {
            FeatureSubsample::All => None,
            FeatureSubsample::Sqrt => {
                let k = (n_features as f64).sqrt().floor() as usize;
                Some(k.clamp(1, n_features)).filter(|&k| k < n_features)
            }
            FeatureSubsample::Count(k) => Some(k.clamp(1, n_features)).filter(|&k| k < n_features),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub variant: ForestVariant,
    pub n_trees: u32,
    pub max_depth: Option<u32>,
    pub min_leaf: u32,
    pub min_gain: f64,
    pub feature_subsample: FeatureSubsample,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> ForestParams {
        ForestParams::for_variant(ForestVariant::RandomForest)
    }
}

impl ForestParams {
    /// Conventional defaults per variant: 200 trees, unbounded depth,
    /// `min_leaf` 5; bootstrap plus √F candidates for random forest, bootstrap
    /// plus all features for bagging, no bootstrap plus √F random-threshold
    /// candidates for extra trees.
    pub fn for_variant(variant: ForestVariant) -> ForestParams {
        let (bootstrap, feature_subsample) = match variant {
            ForestVariant::RandomForest => (true, FeatureSubsample::Sqrt),
            ForestVariant::Bagging => (true, FeatureSubsample::All),
            ForestVariant::ExtraTrees => (false, FeatureSubsample::Sqrt),
        };
        ForestParams {
            variant,
            n_trees: 200,
            max_depth: None,
            min_leaf: 5,
            min_gain: 0.0,
            feature_subsample,
            bootstrap,
        }
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            min_gain: self.min_gain,
        }
    }
}

/// A fitted tree ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub variant: ForestVariant,
    pub trees: Vec<TreeModel>,
    pub n_features: usize,
    pub seed: u64,
}

impl ForestModel {
    /// Mean of the member trees' leaf distributions.
    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbVector, LearnerError> {
        if x.len() != self.n_features {
            return Err(LearnerError::SchemaMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut mean = [0.0; NUM_MODES];
        for tree in &self.trees {
            let p = tree.predict_proba(x)?;
            for (m, v) in mean.iter_mut().zip(&p) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= self.trees.len() as f64;
        }
        Ok(mean)
    }
}

/// Fits a forest of `params.n_trees` trees.
pub fn fit_forest(
    x: &[Vec<f64>],
    y: &[ModeLabel],
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel, LearnerError> {
    super::check_training_set(x, y)?;
    if params.n_trees == 0 {
        return Err(LearnerError::EmptyTrainingSet);
    }
    let n = x.len();
    let n_features = x[0].len();
    let y8: Vec<u8> = y.iter().map(|m| m.index() as u8).collect();
    let subsample = params.feature_subsample.resolve(n_features);
    let tree_params = params.tree_params();
    // Extra trees search raw values; the others scan pre-binned columns.
    let binned = match params.variant {
        ForestVariant::ExtraTrees => None,
        _ => Some(BinnedDataset::build(x)),
    };
    let trees: Vec<TreeModel> = (0..params.n_trees as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, "tree", i);
            let rows: Vec<u32> = if params.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n) as u32).collect()
            } else {
                (0..n as u32).collect()
            };
            match (&binned, params.variant) {
                (_, ForestVariant::ExtraTrees) => {
                    tree::fit_extra_tree(x, rows, &y8, &tree_params, subsample, &mut rng)
                }
                (Some(binned), _) => tree::fit_classification_tree(
                    binned,
                    rows,
                    &y8,
                    &tree_params,
                    subsample,
                    Some(&mut rng),
                ),
                (None, _) => unreachable!("non-extra variants always bin"),
            }
        })
        .collect();
    Ok(ForestModel {
        variant: params.variant,
        trees,
        n_features,
        seed,
    })
}
