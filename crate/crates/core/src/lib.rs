//! Estimation of long-term treatment effects from multi-stage panels with
//! monotone outcome dropout.
//!
//! The library is organized around an observed panel ([`LongTermDataset`]):
//! covariates `X`, a binary treatment `A`, staged short-term outcomes
//! `S_1..S_{T-1}`, a long-term outcome `Y`, and an observation-indicator
//! matrix `R` whose rows are non-increasing (once a unit drops out it stays
//! out). On top of that sit:
//!
//! - [`dgp`]: seeded synthetic data generation with ground-truth potential
//!   outcomes, plus the score-rank and sequential-logistic dropout mechanisms;
//! - [`nuisance`]: logistic propensity / stagewise selection-score models and
//!   a small feed-forward regressor with hand-written backpropagation;
//! - [`estimators`]: naive outcome-regression and IPW baselines, a
//!   selection-score-weighted IPW estimator, sequential regression imputation,
//!   and a sequential marginal structural model;
//! - [`balance`]: a per-stage encoder/two-head network trained with factual
//!   prediction loss plus squared linear MMD penalties that balance
//!   observed-vs-missing rows and treated-vs-control rows;
//! - [`metrics`]: the evaluation metrics, trial aggregation, and the paired
//!   t-test used for method comparison.

pub mod balance;
pub mod dataset;
pub mod dgp;
pub mod estimators;
pub mod metrics;
pub mod nuisance;
pub mod util;

pub use dataset::{CsvSchema, DatasetError, GroundTruth, LongTermDataset, MonotoneViolation};
pub use dgp::{DgpConfig, DgpDraw, DgpStyle, MissingMechanism, Simulated};
pub use estimators::{Diagnostics, EffectEstimate, EstimatorConfig, Method, RegressorSpec};
pub use nuisance::{NuisanceScores, TrainConfig};
