//! Freight mode-choice modeling on CFS-style shipment microdata.
//!
//! The crate covers the full modeling pipeline for predicting which of five
//! freight modes (for-hire truck, private truck, parcel, air, other) carries a
//! shipment, given only the fields of a Commodity Flow Survey public-use file:
//!
//! 1. [`ingest`] parses PUF-schema CSV into validated [`model::ShipmentRecord`]s,
//!    filtering rows whose mode code does not map to one of the five modes.
//! 2. [`split`] produces stratified train/test partitions and k-fold
//!    assignments, stratified on (SCTG, NAICS) pairs.
//! 3. [`features`] builds the derived-distance features: per-mode median routed
//!    distances between origin-destination areas, linear-regression imputation
//!    for missing pairs, and the imputation indicator flags. Training rows get
//!    their derived distances through a fold-exclusion protocol so no row ever
//!    sees a statistic computed from its own fold.
//! 4. [`learners`] implements the level-1 classifiers from scratch: CART
//!    trees, random forests, bagged trees, extremely randomized trees, a
//!    Newton-boosted softmax tree ensemble, and simple baselines.
//! 5. [`segmented`] fits one dedicated model per SCTG or NAICS category and
//!    dispatches predictions by category with a global fallback.
//! 6. [`ensemble`] combines models: dynamic probability voting over the
//!    per-record model pool, and two-level stacking with out-of-fold
//!    meta-features.
//! 7. [`eval`] computes confusion-matrix metrics, per-mode ROC/AUC, and
//!    bootstrap standard errors.
//! 8. [`explain`] provides impurity importances, exact path-dependent TreeSHAP
//!    with a brute-force Shapley oracle, and SHAP summary/dependence exports.
//! 9. [`synth`] generates CFS-like synthetic data with planted category
//!    heterogeneity and od-pair mode availability, including ground-truth
//!    choice probabilities and the Bayes accuracy ceiling.
//! 10. [`pipeline`] orchestrates the stages behind the `freightmode` binary
//!     and persists versioned model/report artifacts.
//!
//! Every source of randomness is seeded explicitly; rerunning any stage with
//! the same configuration reproduces its artifacts byte for byte.
//!
//! See the crate `examples/` directory for one runnable example per
//! capability, and `README.md` for the CLI walkthrough.

pub mod ensemble;
pub mod eval;
pub mod explain;
pub mod features;
pub mod ingest;
pub mod learners;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod segmented;
pub mod split;
pub mod synth;

#[cfg(test)]
pub(crate) mod testutil;

pub use model::{AreaType, Hazmat, ModeLabel, ShipmentRecord, NUM_MODES};
