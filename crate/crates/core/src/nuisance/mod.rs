//! Nuisance models: logistic propensity and stagewise selection scores,
//! plus a small feed-forward regressor trained with explicit
//! backpropagation. Every analytic gradient in this module (and in
//! [`crate::balance`]) is auditable against central finite differences via
//! [`gradient_check`].

mod linear;
mod logistic;
mod net;
mod scores;

pub use linear::LinearModel;
pub use logistic::{fit_logistic, logistic_loss_grad, LogisticConfig, LogisticFit, LogisticModel};
pub use net::{
    adam_fit, gradient_check, regression_loss, regression_loss_grad, Activation, AdamSettings,
    FeedForwardRegressor, FitTrace, MlpSpec, TrainConfig,
};
pub use scores::{estimate_propensity, estimate_selection_scores, NuisanceScores, PropensityFit, SelectionScores, SelectionStageModel};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite training loss at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("invalid sample weights: {0}")]
    InvalidWeights(String),
    #[error("labels must be binary 0/1")]
    NonBinaryLabels,
    #[error("need at least {need} training rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("no overlap: dataset contains a single treatment arm")]
    NoOverlap,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("least-squares solve failed: {0}")]
    Solve(String),
}
