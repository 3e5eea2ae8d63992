//! Propensity and stagewise selection-score estimation.
//!
//! The selection score at stage `t` is the marginal observation probability
//! `P(R_t = 1 | X, A, S_1..S_{t-1})`. Under monotone dropout it factorizes
//! into stagewise conditional probabilities, each estimable by a logistic
//! regression restricted to the units still observed at the previous stage;
//! the per-unit score is the running product of the fitted factors.

use super::logistic::{fit_logistic, LogisticConfig, LogisticModel};
use super::ModelError;
use crate::dataset::LongTermDataset;
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct PropensityFit {
    /// Clipped `P(A=1 | X)` per unit.
    pub e1: Array1<f64>,
    pub model: LogisticModel,
}

/// Logistic fit of treatment on covariates over all units.
pub fn estimate_propensity(
    ds: &LongTermDataset,
    cfg: &LogisticConfig,
) -> Result<PropensityFit, ModelError> {
    let labels = Array1::from_iter(ds.a().iter().map(|&v| f64::from(v)));
    let fit = fit_logistic(ds.x().view(), labels.view(), None, cfg)?;
    if fit.degenerate {
        return Err(ModelError::NoOverlap);
    }
    let e1 = fit.model.predict_proba(ds.x().view(), cfg.eps_clip);
    Ok(PropensityFit {
        e1,
        model: fit.model,
    })
}

/// One stagewise selection factor. Stages where every eligible unit stayed
/// observed carry no information; their factor is pinned at exactly 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionStageModel {
    pub model: LogisticModel,
    pub all_observed: bool,
}

impl SelectionStageModel {
    fn factor(&self, features: ArrayView1<f64>, eps_clip: f64) -> f64 {
        if self.all_observed {
            1.0
        } else {
            let z = features.dot(&self.model.weights) + self.model.bias;
            crate::util::sigmoid(z).clamp(eps_clip, 1.0 - eps_clip)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectionScores {
    /// `n x T`; entry `(i, t-1)` is defined exactly when unit `i` has its
    /// stage-`(t-1)` inputs observed.
    pub r: Array2<Option<f64>>,
    pub stage_models: Vec<SelectionStageModel>,
    /// Rows used to fit each stage model; equals the observed count at the
    /// previous stage.
    pub rows_fit_per_stage: Vec<usize>,
    pub flags: Vec<String>,
}

/// Stage-`t` feature row `[x.., a, s_1..s_{t-1}]` for unit `i`; requires
/// those outcomes to be observed.
fn stage_features(ds: &LongTermDataset, i: usize, stage: usize) -> Vec<f64> {
    let mut f = Vec::with_capacity(ds.p() + stage);
    for j in 0..ds.p() {
        f.push(ds.x()[[i, j]]);
    }
    f.push(f64::from(ds.a()[i]));
    for t in 0..stage - 1 {
        f.push(ds.s()[[i, t]].expect("eligible units have observed history"));
    }
    f
}

/// Fits the stagewise factorization and returns per-unit score products.
pub fn estimate_selection_scores(
    ds: &LongTermDataset,
    cfg: &LogisticConfig,
) -> Result<SelectionScores, ModelError> {
    let n = ds.n();
    let t_total = ds.stages();
    let mut r = Array2::<Option<f64>>::from_elem((n, t_total), None);
    let mut stage_models = Vec::with_capacity(t_total);
    let mut rows_fit = Vec::with_capacity(t_total);
    let mut flags = Vec::new();
    let mut running: Vec<Option<f64>> = vec![Some(1.0); n];

    for stage in 1..=t_total {
        let eligible: Vec<usize> = if stage == 1 {
            (0..n).collect()
        } else {
            (0..n).filter(|&i| ds.observed(i, stage - 1)).collect()
        };
        rows_fit.push(eligible.len());
        if eligible.is_empty() {
            return Err(ModelError::TooFewRows { need: 1, got: 0 });
        }
        let width = ds.p() + stage;
        let mut design = Array2::<f64>::zeros((eligible.len(), width));
        let mut labels = Array1::<f64>::zeros(eligible.len());
        for (row, &i) in eligible.iter().enumerate() {
            for (col, v) in stage_features(ds, i, stage).into_iter().enumerate() {
                design[[row, col]] = v;
            }
            labels[row] = f64::from(ds.observed(i, stage));
        }
        let all_observed = labels.iter().all(|&v| v == 1.0);
        let stage_model = if all_observed {
            flags.push(format!(
                "stage {stage}: no missing units among eligible; factor fixed at 1"
            ));
            SelectionStageModel {
                model: LogisticModel {
                    weights: Array1::zeros(width),
                    bias: 0.0,
                },
                all_observed: true,
            }
        } else {
            let fit = fit_logistic(design.view(), labels.view(), None, cfg)?;
            if fit.degenerate {
                flags.push(format!("stage {stage}: degenerate single-class fit"));
            }
            SelectionStageModel {
                model: fit.model,
                all_observed: false,
            }
        };
        for (row, &i) in eligible.iter().enumerate() {
            let factor = stage_model.factor(design.row(row), cfg.eps_clip);
            let prod = running[i].expect("eligible implies defined") * factor;
            r[[i, stage - 1]] = Some(prod);
            running[i] = Some(prod);
        }
        // Units not eligible at this stage never regain a defined score.
        for i in 0..n {
            if !eligible.contains(&i) {
                running[i] = None;
            }
        }
        stage_models.push(stage_model);
    }
    Ok(SelectionScores {
        r,
        stage_models,
        rows_fit_per_stage: rows_fit,
        flags,
    })
}

/// Propensity plus selection scores, as consumed by the estimators. Either
/// fitted from data or injected from an oracle.
#[derive(Debug, Clone)]
pub struct NuisanceScores {
    /// Clipped `P(A=1 | X)`.
    pub e1: Array1<f64>,
    /// Per-unit selection-score products; `None` where undefined.
    pub r: Array2<Option<f64>>,
    pub rows_fit_per_stage: Vec<usize>,
    pub flags: Vec<String>,
    pub eps_clip: f64,
    stage_models: Option<Vec<SelectionStageModel>>,
}

impl NuisanceScores {
    pub fn fit(ds: &LongTermDataset, cfg: &LogisticConfig) -> Result<Self, ModelError> {
        let prop = estimate_propensity(ds, cfg)?;
        let sel = estimate_selection_scores(ds, cfg)?;
        Ok(Self {
            e1: prop.e1,
            r: sel.r,
            rows_fit_per_stage: sel.rows_fit_per_stage,
            flags: sel.flags,
            eps_clip: cfg.eps_clip,
            stage_models: Some(sel.stage_models),
        })
    }

    /// Wraps known true scores. The same clipping as the fitted path is
    /// applied so downstream inverse weights stay bounded.
    pub fn from_oracle(e1: Array1<f64>, r: Array2<f64>, eps_clip: f64) -> Self {
        let t = r.ncols();
        let clipped_e = e1.map(|&v| v.clamp(eps_clip, 1.0 - eps_clip));
        let clipped_r = Array2::from_shape_fn(r.dim(), |(i, u)| {
            Some(r[[i, u]].clamp(eps_clip.powi(t as i32), 1.0))
        });
        Self {
            e1: clipped_e,
            r: clipped_r,
            rows_fit_per_stage: Vec::new(),
            flags: vec!["oracle nuisances".to_string()],
            eps_clip,
            stage_models: None,
        }
    }

    /// Propensity of the received arm: `e1` for treated, `1 - e1` for
    /// control.
    pub fn e_of_arm(&self, i: usize, arm: u8) -> f64 {
        if arm == 1 {
            self.e1[i]
        } else {
            1.0 - self.e1[i]
        }
    }

    /// Evaluates the fitted stage factorization at an arbitrary point;
    /// `s_prefix` must carry at least `stage - 1` outcomes. `None` when the
    /// scores were injected rather than fitted.
    pub fn eval_selection(
        &self,
        x_row: &[f64],
        a: u8,
        s_prefix: &[f64],
        stage: usize,
    ) -> Option<f64> {
        let models = self.stage_models.as_ref()?;
        let mut prod = 1.0;
        for u in 1..=stage {
            let mut features: Vec<f64> = x_row.to_vec();
            features.push(f64::from(a));
            features.extend_from_slice(&s_prefix[..u - 1]);
            let view = ArrayView1::from(&features);
            prod *= models[u - 1].factor(view, self.eps_clip);
        }
        Some(prod)
    }
}
