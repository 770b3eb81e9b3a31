//! Non-tree reference classifiers: multinomial logistic regression,
//! naive Bayes, and k-nearest-neighbors.
//!
//! These exist to reproduce the comparison columns of the evaluation table,
//! not to win it. Logistic regression and KNN standardize features (z-scores
//! fitted on training data); naive Bayes models each column independently,
//! using a Bernoulli likelihood for 0/1 columns (flags and one-hots) and a
//! Gaussian for the rest.

use super::{softmax, LearnerError, ProbVector};
use crate::model::{ModeLabel, NUM_MODES};
use serde::{Deserialize, Serialize};

/// Per-feature z-score parameters fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Standardizer {
        let n = x.len() as f64;
        let n_features = x.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; n_features];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; n_features];
        for row in x {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0 // constant columns pass through unscaled
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticParams {
    pub l2: f64,
    pub learning_rate: f64,
    pub max_iter: u32,
    /// Stop when the largest gradient entry falls below this.
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> LogisticParams {
        LogisticParams {
            l2: 1e-4,
            learning_rate: 0.5,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    standardizer: Standardizer,
    /// `weights[class][feature]`.
    weights: Vec<Vec<f64>>,
    bias: [f64; NUM_MODES],
}

impl LogisticModel {
    pub fn n_features(&self) -> usize {
        self.standardizer.mean.len()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbVector, LearnerError> {
        if x.len() != self.n_features() {
            return Err(LearnerError::SchemaMismatch {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        let z = self.standardizer.transform(x);
        let mut scores = self.bias;
        for (c, w) in self.weights.iter().enumerate() {
            scores[c] += w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(softmax(&scores))
    }
}

/// Full-batch gradient descent on the softmax cross-entropy with an L2
/// penalty on weights (not biases).
pub fn fit_logistic(
    x: &[Vec<f64>],
    y: &[ModeLabel],
    params: &LogisticParams,
) -> Result<LogisticModel, LearnerError> {
    super::check_training_set(x, y)?;
    let n = x.len();
    let n_features = x[0].len();
    let standardizer = Standardizer::fit(x);
    let z: Vec<Vec<f64>> = x.iter().map(|row| standardizer.transform(row)).collect();
    let y_index: Vec<usize> = y.iter().map(|m| m.index()).collect();

    let mut weights = vec![vec![0.0; n_features]; NUM_MODES];
    let mut bias = [0.0; NUM_MODES];
    for _ in 0..params.max_iter {
        let mut grad_w = vec![vec![0.0; n_features]; NUM_MODES];
        let mut grad_b = [0.0; NUM_MODES];
        for (row, &yi) in z.iter().zip(&y_index) {
            let mut scores = bias;
            for (c, w) in weights.iter().enumerate() {
                scores[c] += w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            }
            let p = softmax(&scores);
            for c in 0..NUM_MODES {
                let err = p[c] - if yi == c { 1.0 } else { 0.0 };
                grad_b[c] += err;
                for (g, v) in grad_w[c].iter_mut().zip(row) {
                    *g += err * v;
                }
            }
        }
        let mut max_grad = 0.0f64;
        for c in 0..NUM_MODES {
            grad_b[c] /= n as f64;
            max_grad = max_grad.max(grad_b[c].abs());
            for (g, w) in grad_w[c].iter_mut().zip(&weights[c]) {
                *g = *g / n as f64 + params.l2 * w;
                max_grad = max_grad.max(g.abs());
            }
        }
        if max_grad < params.tol {
            break;
        }
        for c in 0..NUM_MODES {
            bias[c] -= params.learning_rate * grad_b[c];
            for (w, g) in weights[c].iter_mut().zip(&grad_w[c]) {
                *w -= params.learning_rate * g;
            }
        }
    }
    Ok(LogisticModel {
        standardizer,
        weights,
        bias,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NaiveBayesParams {
    /// Additive smoothing for Bernoulli likelihoods.
    pub laplace: f64,
    /// Variance floor for Gaussian likelihoods, as a fraction of the largest
    /// feature variance.
    pub var_smoothing: f64,
}

impl Default for NaiveBayesParams {
    fn default() -> NaiveBayesParams {
        NaiveBayesParams {
            laplace: 1.0,
            var_smoothing: 1e-9,
        }
    }
}

/// Per-feature likelihood statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum FeatureLikelihood {
    /// Mean and variance per class.
    Gaussian {
        mean: [f64; NUM_MODES],
        var: [f64; NUM_MODES],
    },
    /// P(x=1 | class), Laplace-smoothed.
    Bernoulli { p_one: [f64; NUM_MODES] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    /// Class priors as probabilities (may legitimately contain zeros).
    priors: [f64; NUM_MODES],
    features: Vec<FeatureLikelihood>,
}

impl NaiveBayesModel {
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbVector, LearnerError> {
        if x.len() != self.n_features() {
            return Err(LearnerError::SchemaMismatch {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        // Work in log space; ln(0) = −∞ cleanly zeroes absent classes.
        let mut log_post: [f64; NUM_MODES] = std::array::from_fn(|c| self.priors[c].ln());
        for (feature, &v) in self.features.iter().zip(x) {
            for c in 0..NUM_MODES {
                log_post[c] += match feature {
                    FeatureLikelihood::Gaussian { mean, var } => {
                        let d = v - mean[c];
                        -0.5 * ((2.0 * std::f64::consts::PI * var[c]).ln() + d * d / var[c])
                    }
                    FeatureLikelihood::Bernoulli { p_one } => {
                        if v > 0.5 {
                            p_one[c].ln()
                        } else {
                            (1.0 - p_one[c]).ln()
                        }
                    }
                };
            }
        }
        Ok(softmax(&log_post))
    }
}

/// Gaussian/Bernoulli naive Bayes; a column whose training values are all 0
/// or 1 is treated as Bernoulli.
pub fn fit_naive_bayes(
    x: &[Vec<f64>],
    y: &[ModeLabel],
    params: &NaiveBayesParams,
) -> Result<NaiveBayesModel, LearnerError> {
    super::check_training_set(x, y)?;
    let n = x.len();
    let n_features = x[0].len();
    let y_index: Vec<usize> = y.iter().map(|m| m.index()).collect();
    let mut class_counts = [0usize; NUM_MODES];
    for &c in &y_index {
        class_counts[c] += 1;
    }
    let priors: [f64; NUM_MODES] = std::array::from_fn(|c| class_counts[c] as f64 / n as f64);

    let mut features = Vec::with_capacity(n_features);
    for f in 0..n_features {
        let is_binary = x.iter().all(|row| row[f] == 0.0 || row[f] == 1.0);
        if is_binary {
            let mut ones = [0.0f64; NUM_MODES];
            for (row, &c) in x.iter().zip(&y_index) {
                if row[f] == 1.0 {
                    ones[c] += 1.0;
                }
            }
            let p_one = std::array::from_fn(|c| {
                (ones[c] + params.laplace) / (class_counts[c] as f64 + 2.0 * params.laplace)
            });
            features.push(FeatureLikelihood::Bernoulli { p_one });
        } else {
            let mut mean = [0.0f64; NUM_MODES];
            for (row, &c) in x.iter().zip(&y_index) {
                mean[c] += row[f];
            }
            for c in 0..NUM_MODES {
                if class_counts[c] > 0 {
                    mean[c] /= class_counts[c] as f64;
                }
            }
            let mut var = [0.0f64; NUM_MODES];
            for (row, &c) in x.iter().zip(&y_index) {
                let d = row[f] - mean[c];
                var[c] += d * d;
            }
            // Global variance sets the smoothing scale, as is conventional.
            let global_mean = x.iter().map(|r| r[f]).sum::<f64>() / n as f64;
            let global_var =
                x.iter().map(|r| (r[f] - global_mean).powi(2)).sum::<f64>() / n as f64;
            let floor = (params.var_smoothing * global_var).max(1e-12);
            for c in 0..NUM_MODES {
                var[c] = if class_counts[c] > 0 {
                    (var[c] / class_counts[c] as f64).max(floor)
                } else {
                    1.0 // unused: the zero prior removes the class
                };
            }
            features.push(FeatureLikelihood::Gaussian { mean, var });
        }
    }
    Ok(NaiveBayesModel { priors, features })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> KnnParams {
        KnnParams { k: 5 }
    }
}

/// k-nearest-neighbors over the standardized training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    standardizer: Standardizer,
    train: Vec<Vec<f64>>,
    labels: Vec<u8>,
    pub k: usize,
}

impl KnnModel {
    pub fn n_features(&self) -> usize {
        self.standardizer.mean.len()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbVector, LearnerError> {
        if x.len() != self.n_features() {
            return Err(LearnerError::SchemaMismatch {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        let z = self.standardizer.transform(x);
        let mut dists: Vec<(f64, usize)> = self
            .train
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let d: f64 = row.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        // Distance ties resolve by training index, keeping votes deterministic.
        dists.sort_by(|a, b| a.partial_cmp(b).expect("distances are never NaN"));
        let mut votes = [0.0; NUM_MODES];
        for &(_, i) in dists.iter().take(self.k) {
            votes[self.labels[i] as usize] += 1.0 / self.k as f64;
        }
        Ok(votes)
    }
}

pub fn fit_knn(x: &[Vec<f64>], y: &[ModeLabel], params: &KnnParams) -> Result<KnnModel, LearnerError> {
    super::check_training_set(x, y)?;
    if params.k == 0 || params.k > x.len() {
        return Err(LearnerError::InvalidK {
            k: params.k,
            n: x.len(),
        });
    }
    let standardizer = Standardizer::fit(x);
    Ok(KnnModel {
        train: x.iter().map(|row| standardizer.transform(row)).collect(),
        labels: y.iter().map(|m| m.index() as u8).collect(),
        standardizer,
        k: params.k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::argmax_mode;
    use crate::model::ModeLabel::{ForHireTruck, Parcel, PrivateTruck};

    #[test]
    fn naive_bayes_on_single_class_always_predicts_it() {
        let x = vec![vec![1.0, 0.0], vec![2.0, 1.0], vec![3.0, 0.0]];
        let y = vec![Parcel; 3];
        let model = fit_naive_bayes(&x, &y, &NaiveBayesParams::default()).unwrap();
        for probe in [[0.0, 0.0], [100.0, 1.0], [-5.0, 0.0]] {
            let p = model.predict_proba(&probe).unwrap();
            assert!(p[Parcel.index()] >= 1.0 - 1e-9, "{p:?}");
        }
    }

    #[test]
    fn naive_bayes_uses_predictive_flags() {
        // Flag column perfectly identifies the class; numeric column is noise.
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..30 {
            x.push(vec![(i % 7) as f64, 1.0]);
            y.push(ForHireTruck);
            x.push(vec![(i % 7) as f64, 0.0]);
            y.push(PrivateTruck);
        }
        let model = fit_naive_bayes(&x, &y, &NaiveBayesParams::default()).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(row, label)| argmax_mode(&model.predict_proba(row).unwrap()) == **label)
            .count();
        assert_eq!(correct, x.len());
    }

    #[test]
    fn knn_k1_returns_the_training_points_own_label() {
        let x = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 10.0]];
        let y = vec![ForHireTruck, PrivateTruck, Parcel];
        let model = fit_knn(&x, &y, &KnnParams { k: 1 }).unwrap();
        for (row, label) in x.iter().zip(&y) {
            let p = model.predict_proba(row).unwrap();
            assert_eq!(p[label.index()], 1.0);
        }
    }

    #[test]
    fn knn_rejects_k_larger_than_n() {
        let x = vec![vec![0.0]; 3];
        let y = vec![ForHireTruck; 3];
        assert_eq!(
            fit_knn(&x, &y, &KnnParams { k: 4 }).unwrap_err(),
            LearnerError::InvalidK { k: 4, n: 3 }
        );
        assert_eq!(
            fit_knn(&x, &y, &KnnParams { k: 0 }).unwrap_err(),
            LearnerError::InvalidK { k: 0, n: 3 }
        );
    }

    #[test]
    fn knn_probabilities_are_vote_shares() {
        let x = vec![vec![0.0], vec![0.1], vec![0.2], vec![5.0]];
        let y = vec![ForHireTruck, ForHireTruck, PrivateTruck, Parcel];
        let model = fit_knn(&x, &y, &KnnParams { k: 3 }).unwrap();
        let p = model.predict_proba(&[0.05]).unwrap();
        assert!((p[ForHireTruck.index()] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[PrivateTruck.index()] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn logistic_probability_is_monotone_on_separable_1d_data() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<_> = (0..20)
            .map(|i| if i < 10 { ForHireTruck } else { PrivateTruck })
            .collect();
        let model = fit_logistic(&x, &y, &LogisticParams::default()).unwrap();
        let probs: Vec<f64> = (0..20)
            .map(|i| model.predict_proba(&[i as f64]).unwrap()[PrivateTruck.index()])
            .collect();
        for w in probs.windows(2) {
            assert!(w[1] > w[0], "not monotone: {probs:?}");
        }
        // And it classifies the training data correctly.
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(row, label)| argmax_mode(&model.predict_proba(row).unwrap()) == **label)
            .count();
        assert_eq!(correct, 20);
    }

    #[test]
    fn logistic_fit_is_deterministic() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * i % 11) as f64]).collect();
        let y: Vec<_> = (0..30)
            .map(|i| if i % 3 == 0 { ForHireTruck } else { PrivateTruck })
            .collect();
        let a = fit_logistic(&x, &y, &LogisticParams::default()).unwrap();
        let b = fit_logistic(&x, &y, &LogisticParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let x = vec![vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 3.0]];
        let s = Standardizer::fit(&x);
        let z = s.transform(&[3.0, 2.0]);
        assert_eq!(z[0], 0.0); // (3-3)/1
        assert_eq!(z[1], 0.0); // centered at mean
        assert!(z.iter().all(|v| v.is_finite()));
    }
}
