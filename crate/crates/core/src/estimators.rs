//! Effect estimators over a monotone-dropout panel.
//!
//! All estimators return per-unit conditional effect estimates evaluated at
//! every unit, with the average effect defined as their mean. Regressions
//! run behind a common interface with three backends: the feed-forward
//! network (default), a closed-form weighted least-squares plug-in for
//! exactness tests, and a weighted-mean-only plug-in for algebraic
//! reductions.

use crate::balance::{self, BalanceConfig};
use crate::dataset::{DatasetError, LongTermDataset};
use crate::nuisance::{
    FeedForwardRegressor, LinearModel, ModelError, NuisanceScores, TrainConfig,
};
use crate::util::derive_seed;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("empty training set: {0}")]
    EmptyTrainingSet(String),
    #[error("missing nuisance value: {0}")]
    MissingNuisance(String),
    #[error("unknown method tag `{0}`")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    NaiveOr,
    NaiveIpw,
    Cfr,
    ProposedIpw,
    SeqRi,
    SeqMsm,
    BalanceNet,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::NaiveOr,
        Method::NaiveIpw,
        Method::Cfr,
        Method::ProposedIpw,
        Method::SeqRi,
        Method::SeqMsm,
        Method::BalanceNet,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Method::NaiveOr => "naive-or",
            Method::NaiveIpw => "naive-ipw",
            Method::Cfr => "cfr",
            Method::ProposedIpw => "proposed-ipw",
            Method::SeqRi => "seqri",
            Method::SeqMsm => "seqmsm",
            Method::BalanceNet => "balancenet",
        }
    }

    /// Stable id used to separate per-method random streams.
    pub(crate) fn stream_id(&self) -> u64 {
        match self {
            Method::NaiveOr => 1,
            Method::NaiveIpw => 2,
            Method::Cfr => 3,
            Method::ProposedIpw => 4,
            Method::SeqRi => 5,
            Method::SeqMsm => 6,
            Method::BalanceNet => 7,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = EstimatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .iter()
            .find(|m| m.tag() == s)
            .copied()
            .ok_or_else(|| EstimatorError::UnknownMethod(s.to_string()))
    }
}

/// Which regression backend the estimators use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressorSpec {
    /// Feed-forward network configured by [`EstimatorConfig::train`].
    Net,
    /// Closed-form weighted least squares.
    Linear,
    /// Weighted mean of the targets, ignoring features.
    MeanOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub regressor: RegressorSpec,
    pub train: TrainConfig,
    pub balance: BalanceConfig,
    /// Feed observed outcomes instead of fitted values into later
    /// sequential-MSM stages while training.
    pub seqmsm_observed_feed: bool,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            regressor: RegressorSpec::Net,
            train: TrainConfig::default(),
            balance: BalanceConfig::default(),
            seqmsm_observed_feed: false,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn eps_clip(&self) -> f64 {
        self.train.eps_clip
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Labeled training-row counts, e.g. one entry per stage and arm.
    pub rows_used: Vec<(String, usize)>,
    /// Largest inverse-probability weight that entered a fit.
    pub max_weight: Option<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub method: Method,
    pub tau_hat: f64,
    pub cate_hat: Array1<f64>,
    pub diagnostics: Diagnostics,
}

impl EffectEstimate {
    pub(crate) fn from_cate(method: Method, cate_hat: Array1<f64>, diagnostics: Diagnostics) -> Self {
        let tau_hat = cate_hat.sum() / cate_hat.len() as f64;
        Self {
            method,
            tau_hat,
            cate_hat,
            diagnostics,
        }
    }

    /// Training-row count recorded under `label`, if any.
    pub fn rows_for(&self, label: &str) -> Option<usize> {
        self.diagnostics
            .rows_used
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, c)| *c)
    }
}

/// Per-arm chains of imputed stage outcomes evaluated at every unit;
/// column `t-1` of `values[arm]` holds the stage-`t` chain prediction (the
/// last column is the long-term outcome).
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedPanel {
    pub values: [Array2<f64>; 2],
}

/// A fitted outcome regression behind the common backend interface.
#[derive(Debug, Clone)]
pub(crate) enum Fitted {
    Net(FeedForwardRegressor),
    Linear(LinearModel),
    MeanOnly(f64),
}

impl Fitted {
    pub(crate) fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        match self {
            Fitted::Net(net) => net.predict(x),
            Fitted::Linear(m) => m.predict(x),
            Fitted::MeanOnly(c) => Array1::from_elem(x.nrows(), *c),
        }
    }
}

pub(crate) fn fit_model(
    cfg: &EstimatorConfig,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    w: ArrayView1<f64>,
    seed: u64,
) -> Result<Fitted, EstimatorError> {
    match cfg.regressor {
        RegressorSpec::Net => {
            let train = TrainConfig { seed, ..cfg.train.clone() };
            let (net, _) = FeedForwardRegressor::fit(x, y, w, &train)?;
            Ok(Fitted::Net(net))
        }
        RegressorSpec::Linear => Ok(Fitted::Linear(LinearModel::fit(x, y, w)?)),
        RegressorSpec::MeanOnly => {
            let w_total: f64 = w.sum();
            if w_total <= 0.0 {
                return Err(EstimatorError::Model(ModelError::InvalidWeights(
                    "all zero".into(),
                )));
            }
            let mean = y
                .iter()
                .zip(w.iter())
                .map(|(yi, wi)| yi * wi)
                .sum::<f64>()
                / w_total;
            Ok(Fitted::MeanOnly(mean))
        }
    }
}

fn take_rows(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), x.ncols()), |(i, j)| x[[rows[i], j]])
}

/// Outcome value at 1-based stage `t` (stage `T` is the long-term outcome).
fn stage_outcome(ds: &LongTermDataset, i: usize, t: usize) -> Option<f64> {
    if t <= ds.t0() {
        ds.s()[[i, t - 1]]
    } else {
        ds.y()[i]
    }
}

/// Separate outcome regressions of the long-term outcome on covariates per
/// arm, fit on the rows where it is observed.
pub fn naive_or(
    ds: &LongTermDataset,
    cfg: &EstimatorConfig,
) -> Result<EffectEstimate, EstimatorError> {
    let t = ds.stages();
    let mut diag = Diagnostics::default();
    let mut surfaces = Vec::with_capacity(2);
    for arm in 0..2u8 {
        let rows: Vec<usize> = (0..ds.n())
            .filter(|&i| ds.a()[i] == arm && ds.observed(i, t))
            .collect();
        if rows.is_empty() {
            return Err(EstimatorError::EmptyTrainingSet(format!(
                "no observed long-term outcomes in arm {arm}"
            )));
        }
        diag.rows_used.push((format!("arm{arm}"), rows.len()));
        let x = take_rows(ds.x(), &rows);
        let y = Array1::from_iter(rows.iter().map(|&i| ds.y()[i].expect("observed")));
        let w = Array1::ones(rows.len());
        let model = fit_model(
            cfg,
            x.view(),
            y.view(),
            w.view(),
            derive_seed(cfg.seed, &[Method::NaiveOr.stream_id(), u64::from(arm)]),
        )?;
        surfaces.push(model.predict(ds.x().view()));
    }
    let cate = &surfaces[1] - &surfaces[0];
    Ok(EffectEstimate::from_cate(Method::NaiveOr, cate, diag))
}

/// Inverse-propensity pseudo-outcome regression on the rows with an
/// observed long-term outcome; ignores the dropout structure entirely.
pub fn naive_ipw(
    ds: &LongTermDataset,
    nuis: &NuisanceScores,
    cfg: &EstimatorConfig,
) -> Result<EffectEstimate, EstimatorError> {
    let t = ds.stages();
    let rows = ds.observed_subset(t)?;
    if rows.is_empty() {
        return Err(EstimatorError::EmptyTrainingSet(
            "no observed long-term outcomes".into(),
        ));
    }
    let mut diag = Diagnostics::default();
    diag.rows_used.push(("observed-final".into(), rows.len()));
    let x_fit = take_rows(ds.x(), &rows);
    let w = Array1::ones(rows.len());
    let mut max_weight = 0.0f64;
    let mut surfaces = Vec::with_capacity(2);
    for arm in 0..2u8 {
        let pseudo = Array1::from_iter(rows.iter().map(|&i| {
            if ds.a()[i] == arm {
                let e = nuis.e_of_arm(i, arm);
                max_weight = max_weight.max(1.0 / e);
                ds.y()[i].expect("observed") / e
            } else {
                0.0
            }
        }));
        let model = fit_model(
            cfg,
            x_fit.view(),
            pseudo.view(),
            w.view(),
            derive_seed(cfg.seed, &[Method::NaiveIpw.stream_id(), u64::from(arm)]),
        )?;
        surfaces.push(model.predict(ds.x().view()));
    }
    diag.max_weight = Some(max_weight);
    let cate = &surfaces[1] - &surfaces[0];
    Ok(EffectEstimate::from_cate(Method::NaiveIpw, cate, diag))
}

/// Selection-score-weighted pseudo-outcome regression: every unit carries
/// `1{A=a} R_T Y / (e_a(X) r_T)`, which is zero exactly on the rows where
/// the long-term outcome is missing, and each arm's pseudo-outcome is
/// regressed on covariates over all units.
pub fn proposed_ipw(
    ds: &LongTermDataset,
    nuis: &NuisanceScores,
    cfg: &EstimatorConfig,
) -> Result<EffectEstimate, EstimatorError> {
    let t = ds.stages();
    let n = ds.n();
    let mut diag = Diagnostics::default();
    let mut max_weight = 0.0f64;
    let w = Array1::ones(n);
    let mut surfaces = Vec::with_capacity(2);
    for arm in 0..2u8 {
        let mut nonzero = 0usize;
        let mut pseudo = Array1::<f64>::zeros(n);
        for i in 0..n {
            if ds.a()[i] == arm && ds.observed(i, t) {
                let r_t = nuis.r[[i, t - 1]].ok_or_else(|| {
                    EstimatorError::MissingNuisance(format!(
                        "selection score undefined for unit {i} at the final stage"
                    ))
                })?;
                let e = nuis.e_of_arm(i, arm);
                let weight = 1.0 / (e * r_t);
                max_weight = max_weight.max(weight);
                pseudo[i] = ds.y()[i].expect("observed") * weight;
                nonzero += 1;
            }
        }
        diag.rows_used.push((format!("nonzero-arm{arm}"), nonzero));
        let model = fit_model(
            cfg,
            ds.x().view(),
            pseudo.view(),
            w.view(),
            derive_seed(cfg.seed, &[Method::ProposedIpw.stream_id(), u64::from(arm)]),
        )?;
        surfaces.push(model.predict(ds.x().view()));
    }
    diag.max_weight = Some(max_weight);
    let cate = &surfaces[1] - &surfaces[0];
    Ok(EffectEstimate::from_cate(Method::ProposedIpw, cate, diag))
}

/// Sequential regression imputation. Stage `t` of arm `a` regresses the
/// stage-`t` outcome on covariates and preceding outcomes over the
/// still-observed rows of that arm; evaluation feeds each stage's
/// prediction forward, so every unit receives a full imputed chain.
pub fn seqri(
    ds: &LongTermDataset,
    cfg: &EstimatorConfig,
) -> Result<(EffectEstimate, ImputedPanel), EstimatorError> {
    let t_total = ds.stages();
    let n = ds.n();
    let mut diag = Diagnostics::default();
    let mut chains = [
        Array2::<f64>::zeros((n, t_total)),
        Array2::<f64>::zeros((n, t_total)),
    ];
    for arm in 0..2u8 {
        for stage in 1..=t_total {
            let rows: Vec<usize> = (0..n)
                .filter(|&i| ds.a()[i] == arm && ds.observed(i, stage))
                .collect();
            if rows.is_empty() {
                return Err(EstimatorError::EmptyTrainingSet(format!(
                    "arm {arm} has no observed rows at stage {stage}"
                )));
            }
            diag.rows_used
                .push((format!("arm{arm}-stage{stage}"), rows.len()));
            // Observed history: rows observed at `stage` have all earlier
            // outcomes observed under monotone dropout.
            let width = ds.p() + stage - 1;
            let mut x_fit = Array2::<f64>::zeros((rows.len(), width));
            let mut y_fit = Array1::<f64>::zeros(rows.len());
            for (row, &i) in rows.iter().enumerate() {
                for j in 0..ds.p() {
                    x_fit[[row, j]] = ds.x()[[i, j]];
                }
                for u in 1..stage {
                    x_fit[[row, ds.p() + u - 1]] =
                        stage_outcome(ds, i, u).expect("monotone history");
                }
                y_fit[row] = stage_outcome(ds, i, stage).expect("observed");
            }
            let model = fit_model(
                cfg,
                x_fit.view(),
                y_fit.view(),
                Array1::ones(rows.len()).view(),
                derive_seed(
                    cfg.seed,
                    &[Method::SeqRi.stream_id(), u64::from(arm), stage as u64],
                ),
            )?;
            // Evaluate on every unit, feeding predicted values forward.
            let mut x_eval = Array2::<f64>::zeros((n, width));
            for i in 0..n {
                for j in 0..ds.p() {
                    x_eval[[i, j]] = ds.x()[[i, j]];
                }
                for u in 1..stage {
                    x_eval[[i, ds.p() + u - 1]] = chains[arm as usize][[i, u - 1]];
                }
            }
            let preds = model.predict(x_eval.view());
            for i in 0..n {
                chains[arm as usize][[i, stage - 1]] = preds[i];
            }
        }
    }
    let cate = Array1::from_iter(
        (0..n).map(|i| chains[1][[i, t_total - 1]] - chains[0][[i, t_total - 1]]),
    );
    let estimate = EffectEstimate::from_cate(Method::SeqRi, cate, diag);
    Ok((estimate, ImputedPanel { values: chains }))
}

/// One fitted sequential-MSM stage. The network backend models the arm as
/// a feature of a single regression; the exact-arithmetic backends fit one
/// regression per arm, which parametrizes the same function class without
/// restricting the treatment interaction.
enum MsmStage {
    Shared(Fitted),
    PerArm(Box<[Fitted; 2]>),
}

impl MsmStage {
    /// Predictions at a fixed arm; `base` carries `[X | chain values]`.
    fn predict_arm(&self, arm: u8, base: &Array2<f64>) -> Array1<f64> {
        match self {
            MsmStage::Shared(model) => {
                let n = base.nrows();
                let mut with_arm = Array2::<f64>::zeros((n, base.ncols() + 1));
                for i in 0..n {
                    with_arm[[i, 0]] = f64::from(arm);
                    for j in 0..base.ncols() {
                        with_arm[[i, j + 1]] = base[[i, j]];
                    }
                }
                model.predict(with_arm.view())
            }
            MsmStage::PerArm(models) => models[arm as usize].predict(base.view()),
        }
    }
}

/// Sequential marginal structural model: stage `t` fits the stage-`t`
/// outcome on (arm, covariates, fitted earlier stages) with per-row weight
/// `1/e_a(X) * R_t/r_t`, so only still-observed rows carry weight and the
/// weighted population mimics the full one. The final stage evaluated at
/// both arms yields the conditional effects.
pub fn seqmsm(
    ds: &LongTermDataset,
    nuis: &NuisanceScores,
    cfg: &EstimatorConfig,
) -> Result<EffectEstimate, EstimatorError> {
    let t_total = ds.stages();
    let n = ds.n();
    let p = ds.p();
    let mut diag = Diagnostics::default();
    let mut max_weight = 0.0f64;
    // chains[arm] accumulates fitted stage values per unit.
    let mut chains = [
        Array2::<f64>::zeros((n, t_total)),
        Array2::<f64>::zeros((n, t_total)),
    ];
    for stage in 1..=t_total {
        let rows: Vec<usize> = (0..n).filter(|&i| ds.observed(i, stage)).collect();
        if rows.is_empty() {
            return Err(EstimatorError::EmptyTrainingSet(format!(
                "no observed rows at stage {stage}"
            )));
        }
        diag.rows_used.push((format!("stage{stage}"), rows.len()));
        let mut weights = Array1::<f64>::zeros(rows.len());
        for (row, &i) in rows.iter().enumerate() {
            let r_t = nuis.r[[i, stage - 1]].ok_or_else(|| {
                EstimatorError::MissingNuisance(format!(
                    "selection score undefined for unit {i} at stage {stage}"
                ))
            })?;
            let weight = 1.0 / (nuis.e_of_arm(i, ds.a()[i]) * r_t);
            max_weight = max_weight.max(weight);
            weights[row] = weight;
        }
        // Stage features per training row: the factual-arm chain (or the
        // observed history when the flag asks for it).
        let history = |i: usize, u: usize| -> f64 {
            if cfg.seqmsm_observed_feed {
                stage_outcome(ds, i, u).expect("training rows have observed history")
            } else {
                chains[ds.a()[i] as usize][[i, u - 1]]
            }
        };
        let targets =
            Array1::from_iter(rows.iter().map(|&i| stage_outcome(ds, i, stage).expect("observed")));
        let seed = derive_seed(cfg.seed, &[Method::SeqMsm.stream_id(), stage as u64]);
        let fitted_stage = match cfg.regressor {
            RegressorSpec::Net => {
                let width = 1 + p + stage - 1;
                let mut x_fit = Array2::<f64>::zeros((rows.len(), width));
                for (row, &i) in rows.iter().enumerate() {
                    x_fit[[row, 0]] = f64::from(ds.a()[i]);
                    for j in 0..p {
                        x_fit[[row, j + 1]] = ds.x()[[i, j]];
                    }
                    for u in 1..stage {
                        x_fit[[row, p + u]] = history(i, u);
                    }
                }
                MsmStage::Shared(fit_model(
                    cfg,
                    x_fit.view(),
                    targets.view(),
                    weights.view(),
                    seed,
                )?)
            }
            RegressorSpec::Linear | RegressorSpec::MeanOnly => {
                let mut per_arm = Vec::with_capacity(2);
                for arm in 0..2u8 {
                    let arm_rows: Vec<usize> = rows
                        .iter()
                        .copied()
                        .filter(|&i| ds.a()[i] == arm)
                        .collect();
                    if arm_rows.is_empty() {
                        return Err(EstimatorError::EmptyTrainingSet(format!(
                            "arm {arm} has no observed rows at stage {stage}"
                        )));
                    }
                    let width = p + stage - 1;
                    let mut x_fit = Array2::<f64>::zeros((arm_rows.len(), width));
                    let mut y_fit = Array1::<f64>::zeros(arm_rows.len());
                    let mut w_fit = Array1::<f64>::zeros(arm_rows.len());
                    for (row, &i) in arm_rows.iter().enumerate() {
                        for j in 0..p {
                            x_fit[[row, j]] = ds.x()[[i, j]];
                        }
                        for u in 1..stage {
                            x_fit[[row, p + u - 1]] = history(i, u);
                        }
                        y_fit[row] = stage_outcome(ds, i, stage).expect("observed");
                        let r_t = nuis.r[[i, stage - 1]].expect("checked above");
                        w_fit[row] = 1.0 / (nuis.e_of_arm(i, arm) * r_t);
                    }
                    per_arm.push(fit_model(
                        cfg,
                        x_fit.view(),
                        y_fit.view(),
                        w_fit.view(),
                        derive_seed(seed, &[u64::from(arm)]),
                    )?);
                }
                MsmStage::PerArm(Box::new([per_arm.remove(0), per_arm.remove(0)]))
            }
        };
        // Extend both counterfactual chains with this stage's predictions.
        for arm in 0..2u8 {
            let width = p + stage - 1;
            let mut base = Array2::<f64>::zeros((n, width));
            for i in 0..n {
                for j in 0..p {
                    base[[i, j]] = ds.x()[[i, j]];
                }
                for u in 1..stage {
                    base[[i, p + u - 1]] = chains[arm as usize][[i, u - 1]];
                }
            }
            let preds = fitted_stage.predict_arm(arm, &base);
            for i in 0..n {
                chains[arm as usize][[i, stage - 1]] = preds[i];
            }
        }
    }
    diag.max_weight = Some(max_weight);
    let cate = Array1::from_iter(
        (0..n).map(|i| chains[1][[i, t_total - 1]] - chains[0][[i, t_total - 1]]),
    );
    Ok(EffectEstimate::from_cate(Method::SeqMsm, cate, diag))
}

/// Uniform dispatch used by the harness; identical inputs give identical
/// outputs, and all weighted estimators consume the same shared nuisance
/// values.
pub fn estimate(
    method: Method,
    ds: &LongTermDataset,
    nuis: &NuisanceScores,
    cfg: &EstimatorConfig,
) -> Result<EffectEstimate, EstimatorError> {
    match method {
        Method::NaiveOr => naive_or(ds, cfg),
        Method::NaiveIpw => naive_ipw(ds, nuis, cfg),
        Method::ProposedIpw => proposed_ipw(ds, nuis, cfg),
        Method::SeqRi => Ok(seqri(ds, cfg)?.0),
        Method::SeqMsm => seqmsm(ds, nuis, cfg),
        Method::Cfr => balance::run_cfr(ds, cfg),
        Method::BalanceNet => balance::run_balancenet(ds, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{self, DgpConfig, MissingMechanism};
    use crate::nuisance::LogisticConfig;
    use crate::util::{rng_from_seed, std_normal};
    use ndarray::Array3;
    use rand::Rng;

    fn linear_cfg(seed: u64) -> EstimatorConfig {
        EstimatorConfig {
            regressor: RegressorSpec::Linear,
            seed,
            ..Default::default()
        }
    }

    /// Fully observed randomized panel with Y = effect*A + x0 + noise.
    fn randomized_panel(n: usize, effect: f64, noise: f64, seed: u64) -> (LongTermDataset, f64) {
        let mut rng = rng_from_seed(seed);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() * 2.0 - 1.0);
        let a = Array1::from_shape_fn(n, |_| u8::from(rng.random::<f64>() < 0.5));
        let s = Array2::from_shape_fn((n, 2), |(i, t)| {
            Some(0.5 * x[[i, 0]] + 0.1 * t as f64)
        });
        let y = Array1::from_shape_fn(n, |i| {
            Some(effect * f64::from(a[i]) + x[[i, 0]] + noise * std_normal(&mut rng))
        });
        let r = Array2::<u8>::ones((n, 3));
        let po_sd = noise * 2f64.sqrt();
        let se = 3.0 * po_sd / (n as f64).sqrt() + 1e-9;
        (
            LongTermDataset::new(x, a, s, y, r).unwrap(),
            se,
        )
    }

    fn unit_nuisance(n: usize, t: usize, e1: f64) -> NuisanceScores {
        NuisanceScores::from_oracle(
            Array1::from_elem(n, e1),
            Array2::from_elem((n, t), 1.0),
            0.01,
        )
    }

    #[test]
    fn naive_or_recovers_randomized_effect() {
        let n = 10_000;
        let (ds, tol) = randomized_panel(n, 2.0, 0.5, 1);
        let est = naive_or(&ds, &linear_cfg(0)).unwrap();
        assert!((est.tau_hat - 2.0).abs() < tol, "tau {}", est.tau_hat);
        assert_eq!(est.tau_hat, est.cate_hat.sum() / n as f64);
    }

    #[test]
    fn naive_or_null_effect_is_null() {
        let (ds, tol) = randomized_panel(10_000, 0.0, 0.5, 2);
        let est = naive_or(&ds, &linear_cfg(0)).unwrap();
        assert!(est.tau_hat.abs() < tol);
    }

    #[test]
    fn naive_or_uses_exactly_the_final_stage_rows() {
        let mut cfg = DgpConfig::continuous(300, 3, 3, 5);
        cfg.gamma = 0.3;
        cfg.cate_draws = 2;
        let ds = dgp::simulate(&cfg).unwrap().dataset;
        let est = naive_or(&ds, &linear_cfg(0)).unwrap();
        for arm in 0..2u8 {
            let expect = (0..ds.n())
                .filter(|&i| ds.a()[i] == arm && ds.observed(i, 3))
                .count();
            let got = est
                .rows_for(&format!("arm{arm}"))
                .expect("diagnostic present");
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn naive_ipw_mean_only_is_horvitz_thompson() {
        let (ds, _) = randomized_panel(500, 1.5, 0.3, 3);
        let n = ds.n();
        let nuis = unit_nuisance(n, 3, 0.5);
        let cfg = EstimatorConfig {
            regressor: RegressorSpec::MeanOnly,
            ..Default::default()
        };
        let est = naive_ipw(&ds, &nuis, &cfg).unwrap();
        let ht: f64 = (0..n)
            .map(|i| {
                let y = ds.y()[i].unwrap();
                if ds.a()[i] == 1 { y / 0.5 } else { -y / 0.5 }
            })
            .sum::<f64>()
            / n as f64;
        assert!((est.tau_hat - ht).abs() < 1e-10, "{} vs {ht}", est.tau_hat);
    }

    #[test]
    fn proposed_ipw_reduces_to_naive_ipw_when_fully_observed() {
        let (ds, _) = randomized_panel(400, 1.0, 0.4, 7);
        let nuis = NuisanceScores::fit(&ds, &LogisticConfig::default()).unwrap();
        // Fully observed panel: every fitted selection factor is pinned at 1.
        let cfg = linear_cfg(0);
        let a = proposed_ipw(&ds, &nuis, &cfg).unwrap();
        let b = naive_ipw(&ds, &nuis, &cfg).unwrap();
        for i in 0..ds.n() {
            assert!((a.cate_hat[i] - b.cate_hat[i]).abs() < 1e-10);
        }
        assert!((a.tau_hat - b.tau_hat).abs() < 1e-10);
    }

    #[test]
    fn proposed_ipw_weights_respect_clip_bound() {
        let mut cfg = DgpConfig::binary_mix(800, 3, 3, 11);
        cfg.gamma = 0.3;
        cfg.cate_draws = 2;
        let ds = dgp::simulate(&cfg).unwrap().dataset;
        let nuis = NuisanceScores::fit(&ds, &LogisticConfig::default()).unwrap();
        let est = proposed_ipw(&ds, &nuis, &linear_cfg(0)).unwrap();
        let bound = 1.0 / 0.01f64.powi(4);
        let max_w = est.diagnostics.max_weight.unwrap();
        assert!(max_w >= 1.0 && max_w <= bound, "max weight {max_w}");
        // Pseudo-outcomes vanish exactly on missing-final rows.
        for arm in 0..2u8 {
            let nonzero = est.rows_for(&format!("nonzero-arm{arm}")).unwrap();
            let expect = (0..ds.n())
                .filter(|&i| ds.a()[i] == arm && ds.observed(i, 3))
                .count();
            assert_eq!(nonzero, expect);
        }
    }

    /// Noise-free affine chain: S1 = affine(X), S2 = affine(X, S1),
    /// Y = affine(X, S1, S2), with arm-specific coefficients.
    fn affine_panel(n: usize, seed: u64, gamma: f64) -> (LongTermDataset, Array3<f64>, Array2<f64>) {
        let mut rng = rng_from_seed(seed);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() * 2.0 - 1.0);
        let a = Array1::from_shape_fn(n, |_| u8::from(rng.random::<f64>() < 0.5));
        let mut s_pot = Array3::<f64>::zeros((n, 2, 2));
        let mut y_pot = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            for arm in 0..2usize {
                let af = arm as f64;
                let s1 = 1.0 + 0.5 * x[[i, 0]] - 0.25 * x[[i, 1]] + 2.0 * af;
                let s2 = -0.5 + 0.8 * x[[i, 1]] + 0.6 * s1 + 0.5 * af;
                let y = 0.2 + 0.3 * x[[i, 0]] + 0.4 * s1 + 0.9 * s2 - 1.0 * af;
                s_pot[[i, 0, arm]] = s1;
                s_pot[[i, 1, arm]] = s2;
                y_pot[[i, arm]] = y;
            }
        }
        let s = Array2::from_shape_fn((n, 2), |(i, t)| Some(s_pot[[i, t, a[i] as usize]]));
        let y = Array1::from_shape_fn(n, |i| Some(y_pot[[i, a[i] as usize]]));
        let r = Array2::<u8>::ones((n, 3));
        let full = LongTermDataset::new(x, a, s, y, r).unwrap();
        let ds = if gamma > 0.0 {
            dgp::apply_missing(&full, gamma, seed ^ 0xabc).unwrap()
        } else {
            full
        };
        (ds, s_pot, y_pot)
    }

    #[test]
    fn seqri_is_exact_on_noise_free_affine_chains() {
        let (ds, s_pot, y_pot) = affine_panel(600, 13, 0.2);
        let (est, panel) = seqri(&ds, &linear_cfg(0)).unwrap();
        for i in 0..ds.n() {
            for arm in 0..2usize {
                assert!((panel.values[arm][[i, 0]] - s_pot[[i, 0, arm]]).abs() < 1e-8);
                assert!((panel.values[arm][[i, 1]] - s_pot[[i, 1, arm]]).abs() < 1e-8);
                assert!((panel.values[arm][[i, 2]] - y_pot[[i, arm]]).abs() < 1e-8);
            }
            let tau_i = y_pot[[i, 1]] - y_pot[[i, 0]];
            assert!((est.cate_hat[i] - tau_i).abs() < 1e-8);
        }
    }

    #[test]
    fn seqri_trains_on_nested_row_sets() {
        let (ds, _, _) = affine_panel(300, 17, 0.25);
        let (est, _) = seqri(&ds, &linear_cfg(0)).unwrap();
        for arm in 0..2u8 {
            let counts: Vec<usize> = (1..=3)
                .map(|stage| est.rows_for(&format!("arm{arm}-stage{stage}")).unwrap())
                .collect();
            assert!(counts[2] <= counts[1] && counts[1] <= counts[0]);
        }
    }

    #[test]
    fn seqmsm_equals_seqri_under_constant_weights() {
        let (ds, _, _) = affine_panel(500, 19, 0.0);
        let nuis = unit_nuisance(ds.n(), 3, 0.5);
        let cfg = linear_cfg(0);
        let msm = seqmsm(&ds, &nuis, &cfg).unwrap();
        let (ri, _) = seqri(&ds, &cfg).unwrap();
        for i in 0..ds.n() {
            assert!(
                (msm.cate_hat[i] - ri.cate_hat[i]).abs() < 1e-8,
                "unit {i}: {} vs {}",
                msm.cate_hat[i],
                ri.cate_hat[i]
            );
        }
        assert!((msm.tau_hat - ri.tau_hat).abs() < 1e-8);
    }

    #[test]
    fn seqmsm_weight_bound_per_stage() {
        let mut cfg = DgpConfig::continuous(600, 3, 4, 23);
        cfg.gamma = 0.25;
        cfg.cate_draws = 2;
        cfg.missing = MissingMechanism::SequentialLogistic { strength: 1.0 };
        let ds = dgp::simulate(&cfg).unwrap().dataset;
        let nuis = NuisanceScores::fit(&ds, &LogisticConfig::default()).unwrap();
        let est = seqmsm(&ds, &nuis, &linear_cfg(0)).unwrap();
        // Stage T weights are the largest: 1/(e*r_T) <= 1/eps^(T+1).
        let bound = 1.0 / 0.01f64.powi(ds.stages() as i32 + 1);
        assert!(est.diagnostics.max_weight.unwrap() <= bound);
    }

    #[test]
    fn dispatch_matches_direct_calls_and_rejects_unknown_tags() {
        let (ds, _, _) = affine_panel(200, 29, 0.1);
        let nuis = NuisanceScores::fit(&ds, &LogisticConfig::default()).unwrap();
        let cfg = linear_cfg(0);
        let via_dispatch = estimate(Method::SeqRi, &ds, &nuis, &cfg).unwrap();
        let direct = seqri(&ds, &cfg).unwrap().0;
        assert_eq!(via_dispatch.cate_hat, direct.cate_hat);
        assert!(matches!(
            "not-a-method".parse::<Method>(),
            Err(EstimatorError::UnknownMethod(_))
        ));
        assert_eq!("seqmsm".parse::<Method>().unwrap(), Method::SeqMsm);
    }

    #[test]
    fn tau_hat_is_mean_of_cate_hat_everywhere() {
        let (ds, _, _) = affine_panel(150, 31, 0.15);
        let nuis = NuisanceScores::fit(&ds, &LogisticConfig::default()).unwrap();
        let cfg = linear_cfg(0);
        for method in [Method::NaiveOr, Method::NaiveIpw, Method::ProposedIpw, Method::SeqRi, Method::SeqMsm] {
            let est = estimate(method, &ds, &nuis, &cfg).unwrap();
            let mean = est.cate_hat.sum() / ds.n() as f64;
            assert!((est.tau_hat - mean).abs() < 1e-12, "{method}");
        }
    }
}
