//! Phalanx formation for ranking a rare class ahead of a majority class in
//! blocked two-class data.
//!
//! The pipeline groups feature variables into *phalanxes* (subsets that work
//! better together in one model than split across models), fits one
//! logistic-regression model per phalanx, and averages the models. Two
//! ensembles optimized on complementary ranking metrics (average precision
//! and rank-last) can be averaged again into a single ensemble of models and
//! metrics.
//!
//! Module map:
//! - [`data`]: blocked datasets, column schemas, block-level folds.
//! - [`metrics`]: APR / RKL / TOP1, hit curves, permutation references.
//! - [`learner`]: IRLS logistic regression and out-of-fold probabilities.
//! - [`apf`]: the three-phase phalanx formation algorithm.
//! - [`ensemble`]: ensemble fitting, prediction, and rank diagnostics.
//! - [`document`]: the versioned JSON model document.
//! - [`cli`]: the `phalanx` command-line front end.
//! - [`synthetic`]: planted-structure data generator used by tests and demos.

pub mod apf;
pub mod cli;
pub mod data;
pub mod document;
pub mod ensemble;
pub mod error;
pub mod learner;
pub mod metrics;
pub mod synthetic;

pub use apf::{run_apf, ApfConfig, ApfResult, Phalanx};
pub use data::{make_folds, BlockedDataset, FoldAssignment, Schema};
pub use ensemble::{build_em, build_emm, predict_em, EnsembleModel};
pub use error::{Error, Result};
pub use learner::{cv_probabilities, fit_logistic, predict, FittedModel, ProbabilityVector};
pub use metrics::{MetricId, MetricSpec, ReferenceDistribution};
