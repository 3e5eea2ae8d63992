//! Synthetic data generation: covariates, treatments, staged potential
//! outcomes in two styles, and two monotone dropout mechanisms.
//!
//! Everything is a pure function of `(config, seed)`. The two outcome styles
//! are
//!
//! - `Continuous`: a Bernoulli first stage driven by a noisy logistic index,
//!   then Gaussian stages where each outcome adds `c1` times the sum of the
//!   unit's preceding outcomes;
//! - `BinaryMix`: a Bernoulli first stage, then Bernoulli-plus-Gaussian
//!   stages whose success probability shifts with the running mean of
//!   preceding outcomes scaled by `c2`.
//!
//! Dropout comes in two flavors. [`apply_missing`] is the rank-based rule:
//! stage 1 drops a uniform `floor(gamma*n)` units, every later stage drops
//! the `floor(gamma*(1-gamma)^(t-1)*n)` still-observed units with the
//! smallest value of (sum of preceding outcomes + sum of covariates). That
//! rule is deterministic given the sample, so no positive selection score
//! exists for the dropped region. [`apply_missing_sequential`] instead flips
//! a per-stage logistic coin in the same index, which keeps every
//! observation probability strictly positive and makes the exact per-unit
//! selection scores available as an oracle for estimator tests.

use crate::dataset::{GroundTruth, LongTermDataset};
use crate::util::{derive_seed, rng_from_seed, sigmoid, std_normal};
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dataset error: {0}")]
    Dataset(#[from] crate::dataset::DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgpStyle {
    /// Gaussian later stages with additive outcome history (`c1` scale).
    Continuous,
    /// Bernoulli-plus-noise later stages with history entering the success
    /// probability (`c2` scale).
    BinaryMix,
}

/// How observation indicators are generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingMechanism {
    /// Deterministic rank rule: smallest-score units drop out.
    ScoreRank,
    /// Stagewise logistic coin flips; exposes exact selection scores.
    /// `strength` scales how strongly the score shifts the log-odds.
    SequentialLogistic { strength: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub style: DgpStyle,
    pub n: usize,
    pub p: usize,
    /// Total outcome stages `T` (short-term stages plus the long-term one).
    pub stages: usize,
    /// History scale for `Continuous` outcomes.
    pub c1: f64,
    /// History scale for `BinaryMix` outcomes.
    pub c2: f64,
    /// Stage-1 noise location/scale per arm (noise enters the logistic
    /// index). The second parameter of every Gaussian in this module is a
    /// standard deviation.
    pub mu0: f64,
    pub mu1: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    /// Missing ratio in [0, 1).
    pub gamma: f64,
    pub missing: MissingMechanism,
    /// Scale of the synthetic treatment-assignment coefficients.
    pub treatment_coef_scale: f64,
    /// Intercept of the treatment-assignment logit; negative values mirror
    /// benchmarks with rare treatment.
    pub treatment_intercept: f64,
    /// Fresh noise chains averaged per unit and arm to estimate the
    /// conditional mean effect given covariates.
    pub cate_draws: usize,
    pub seed: u64,
}

impl DgpConfig {
    /// Continuous-style defaults (stage-1 noise N(1,1) vs N(3,1), c1 = 5).
    pub fn continuous(n: usize, p: usize, stages: usize, seed: u64) -> Self {
        Self {
            style: DgpStyle::Continuous,
            n,
            p,
            stages,
            c1: 5.0,
            c2: 2.0,
            mu0: 1.0,
            mu1: 3.0,
            sigma0: 1.0,
            sigma1: 1.0,
            gamma: 0.0,
            missing: MissingMechanism::ScoreRank,
            treatment_coef_scale: 0.5,
            treatment_intercept: 0.0,
            cate_draws: 2000,
            seed,
        }
    }

    /// BinaryMix-style defaults (stage-1 noise N(0,1) vs N(2,1), c2 = 2).
    pub fn binary_mix(n: usize, p: usize, stages: usize, seed: u64) -> Self {
        Self {
            style: DgpStyle::BinaryMix,
            c1: 5.0,
            c2: 2.0,
            mu0: 0.0,
            mu1: 2.0,
            ..Self::continuous(n, p, stages, seed)
        }
    }

    pub fn validate(&self) -> Result<(), DgpError> {
        if self.n < 1 || self.p < 1 {
            return Err(DgpError::InvalidConfig("need n >= 1 and p >= 1".into()));
        }
        if self.stages < 2 {
            return Err(DgpError::InvalidConfig("need at least 2 stages".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(DgpError::InvalidConfig(format!(
                "gamma must lie in [0,1), got {}",
                self.gamma
            )));
        }
        if self.sigma0 <= 0.0 || self.sigma1 <= 0.0 {
            return Err(DgpError::InvalidConfig("sigma0/sigma1 must be > 0".into()));
        }
        Ok(())
    }

    fn t0(&self) -> usize {
        self.stages - 1
    }
}

/// Per-replication coefficient draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpDraw {
    /// Stage-1 index coefficients, control arm: truncated N(0,1) on [-1,1].
    pub w0: Array1<f64>,
    /// Stage-1 index coefficients, treated arm: Unif(-1,1).
    pub w1: Array1<f64>,
    /// Later-stage coefficients, control arm: components from {0,1,2,3,4}
    /// with probabilities {.5,.2,.15,.1,.05}.
    pub beta0: Array1<f64>,
    /// Later-stage coefficients, treated arm: 4 times truncated N(0,1) on
    /// [0,4].
    pub beta1: Array1<f64>,
    /// Treatment-assignment coefficients: `treatment_coef_scale` * N(0,1).
    pub theta: Array1<f64>,
}

fn truncated_std_normal(lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    // Rejection sampling; accept rates here are ~0.68 and ~0.5.
    loop {
        let z = std_normal(rng);
        if (lo..=hi).contains(&z) {
            return z;
        }
    }
}

/// Samples the per-replication coefficient vectors.
pub fn sample_draw(p: usize, treatment_coef_scale: f64, seed: u64) -> DgpDraw {
    let mut rng = rng_from_seed(seed);
    let w0 = Array1::from_iter((0..p).map(|_| truncated_std_normal(-1.0, 1.0, &mut rng)));
    let w1 = Array1::from_iter((0..p).map(|_| rng.random_range(-1.0..1.0)));
    let beta0 = Array1::from_iter((0..p).map(|_| {
        let u: f64 = rng.random();
        match u {
            u if u < 0.50 => 0.0,
            u if u < 0.70 => 1.0,
            u if u < 0.85 => 2.0,
            u if u < 0.95 => 3.0,
            _ => 4.0,
        }
    }));
    let beta1 =
        Array1::from_iter((0..p).map(|_| 4.0 * truncated_std_normal(0.0, 4.0, &mut rng)));
    let theta = Array1::from_iter(
        (0..p).map(|_| treatment_coef_scale * std_normal(&mut rng)),
    );
    DgpDraw {
        w0,
        w1,
        beta0,
        beta1,
        theta,
    }
}

/// Covariate matrix: the first `ceil(p/2)` columns are standard normal, the
/// rest Bernoulli(0.5) in {0,1}.
pub fn gen_covariates(n: usize, p: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    let normal_cols = p.div_ceil(2);
    let mut x = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        for j in 0..p {
            x[[i, j]] = if j < normal_cols {
                std_normal(&mut rng)
            } else if rng.random::<f64>() < 0.5 {
                1.0
            } else {
                0.0
            };
        }
    }
    x
}

/// Logistic treatment assignment
/// `A_i ~ Bernoulli(sigmoid(intercept + theta . x_i))`.
pub fn gen_treatment(
    x: &Array2<f64>,
    theta: &Array1<f64>,
    intercept: f64,
    seed: u64,
) -> Array1<u8> {
    let mut rng = rng_from_seed(seed);
    let logits = x.dot(theta);
    logits.map(|&z| u8::from(rng.random::<f64>() < sigmoid(intercept + z)))
}

/// True assignment probabilities `P(A=1 | X)` under [`gen_treatment`].
pub fn oracle_propensity(x: &Array2<f64>, theta: &Array1<f64>, intercept: f64) -> Array1<f64> {
    x.dot(theta).map(|&z| sigmoid(intercept + z))
}

/// Per-unit index values reused across chain simulations.
struct UnitIndex {
    w0x: f64,
    w1x: f64,
    b0x: f64,
    b1x: f64,
}

/// One potential-outcome chain `(s_1..s_t0, y)` for a single unit and arm.
fn simulate_chain(
    style: DgpStyle,
    arm: usize,
    idx: &UnitIndex,
    cfg: &DgpConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, f64) {
    let t0 = cfg.t0();
    let (mu, sigma, wx, bx) = if arm == 0 {
        (cfg.mu0, cfg.sigma0, idx.w0x, idx.b0x)
    } else {
        (cfg.mu1, cfg.sigma1, idx.w1x, idx.b1x)
    };
    let mut s = Vec::with_capacity(t0);
    let eps1 = mu + sigma * std_normal(rng);
    let s1 = f64::from(rng.random::<f64>() < sigmoid(wx + eps1));
    s.push(s1);
    match style {
        DgpStyle::Continuous => {
            // Later stages: N(b0x, 1) for control, N(b1x + 2, 0.5) for
            // treated, plus c1 times the running outcome sum.
            let (shift, sd) = if arm == 0 { (0.0, 1.0) } else { (2.0, 0.5) };
            for _t in 2..=t0 {
                let hist: f64 = s.iter().sum();
                let innov = bx + shift + sd * std_normal(rng);
                s.push(innov + cfg.c1 * hist);
            }
            let hist: f64 = s.iter().sum();
            let innov = bx + shift + sd * std_normal(rng);
            (s, innov + cfg.c1 * hist)
        }
        DgpStyle::BinaryMix => {
            let sd = if arm == 0 { 1.0 } else { 0.5 };
            for t in 2..=t0 {
                let hist: f64 = s.iter().sum();
                // The success probability can leave [0,1] once history is
                // added; clamp before sampling.
                let prob = (sigmoid(bx) + cfg.c2 / (t as f64 - 1.0) * hist).clamp(0.0, 1.0);
                let b = f64::from(rng.random::<f64>() < prob);
                let eps = sd * std_normal(rng);
                s.push(b + eps);
            }
            let hist: f64 = s.iter().sum();
            let b = f64::from(rng.random::<f64>() < sigmoid(bx));
            let eps = sd * std_normal(rng);
            (s.clone(), b + cfg.c2 / t0 as f64 * hist + eps)
        }
    }
}

/// Fully observed outcome panel plus ground truth for given covariates,
/// treatments, and coefficient draw. Observed outcomes are the factual slice
/// of the potential outcomes; `tau_x` is the noise-average of `cate_draws`
/// fresh chains per unit and arm.
pub fn gen_outcomes(
    x: &Array2<f64>,
    a: &Array1<u8>,
    draw: &DgpDraw,
    cfg: &DgpConfig,
    seed: u64,
) -> Result<(LongTermDataset, GroundTruth), DgpError> {
    cfg.validate()?;
    let n = x.nrows();
    let t0 = cfg.t0();
    let indices: Vec<UnitIndex> = {
        let w0x = x.dot(&draw.w0);
        let w1x = x.dot(&draw.w1);
        let b0x = x.dot(&draw.beta0);
        let b1x = x.dot(&draw.beta1);
        (0..n)
            .map(|i| UnitIndex {
                w0x: w0x[i],
                w1x: w1x[i],
                b0x: b0x[i],
                b1x: b1x[i],
            })
            .collect()
    };

    let mut rng = rng_from_seed(derive_seed(seed, &[0]));
    let mut s_pot = Array3::<f64>::zeros((n, t0, 2));
    let mut y_pot = Array2::<f64>::zeros((n, 2));
    for i in 0..n {
        for arm in 0..2 {
            let (s, y) = simulate_chain(cfg.style, arm, &indices[i], cfg, &mut rng);
            for (t, &v) in s.iter().enumerate() {
                s_pot[[i, t, arm]] = v;
            }
            y_pot[[i, arm]] = y;
        }
    }

    let mut mc_rng = rng_from_seed(derive_seed(seed, &[1]));
    let draws = cfg.cate_draws.max(1);
    let mut tau_x = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut acc = 0.0;
        for _ in 0..draws {
            let (_, y1) = simulate_chain(cfg.style, 1, &indices[i], cfg, &mut mc_rng);
            let (_, y0) = simulate_chain(cfg.style, 0, &indices[i], cfg, &mut mc_rng);
            acc += y1 - y0;
        }
        tau_x[i] = acc / draws as f64;
    }

    let s_obs = Array2::from_shape_fn((n, t0), |(i, t)| Some(s_pot[[i, t, a[i] as usize]]));
    let y_obs = Array1::from_iter((0..n).map(|i| Some(y_pot[[i, a[i] as usize]])));
    let r = Array2::<u8>::ones((n, cfg.stages));
    let ds = LongTermDataset::new(x.clone(), a.clone(), s_obs, y_obs, r)?;
    let gt = GroundTruth::new(s_pot, y_pot, tau_x);
    Ok((ds, gt))
}

/// True effects stored in a ground-truth container: the finite-sample ATE
/// and the per-unit conditional means.
pub fn true_effects(gt: &GroundTruth) -> (f64, Array1<f64>) {
    (gt.tau(), gt.tau_x().clone())
}

/// Dropout score at stage `t` (1-based, `t >= 2`): sum of the unit's
/// outcomes from stages `1..t-1` plus the sum of its covariates.
fn dropout_score(ds: &LongTermDataset, i: usize, t: usize) -> f64 {
    let mut score: f64 = (0..ds.p()).map(|j| ds.x()[[i, j]]).sum();
    for j in 0..(t - 1).min(ds.t0()) {
        score += ds.s()[[i, j]].expect("score uses only still-observed units");
    }
    score
}

fn blank_missing(ds: &LongTermDataset, r: Array2<u8>) -> Result<LongTermDataset, DgpError> {
    let n = ds.n();
    let t0 = ds.t0();
    let s = Array2::from_shape_fn((n, t0), |(i, t)| {
        if r[[i, t]] == 1 {
            ds.s()[[i, t]]
        } else {
            None
        }
    });
    let y = Array1::from_iter((0..n).map(|i| {
        if r[[i, t0]] == 1 {
            ds.y()[i]
        } else {
            None
        }
    }));
    Ok(LongTermDataset::new(
        ds.x().clone(),
        ds.a().clone(),
        s,
        y,
        r,
    )?)
}

/// Rank-based monotone dropout. Stage 1 removes a uniformly random
/// `floor(gamma*n)` units; each later stage removes the
/// `floor(gamma*(1-gamma)^(t-1)*n)` still-observed units with the smallest
/// dropout score (ties broken by lowest unit index). Requires a fully
/// observed panel.
pub fn apply_missing(
    ds: &LongTermDataset,
    gamma: f64,
    seed: u64,
) -> Result<LongTermDataset, DgpError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(DgpError::InvalidConfig(format!(
            "gamma must lie in [0,1), got {gamma}"
        )));
    }
    let n = ds.n();
    let t = ds.stages();
    if ds.r().iter().any(|&v| v == 0) {
        return Err(DgpError::InvalidConfig(
            "apply_missing expects a fully observed panel".into(),
        ));
    }
    let mut r = Array2::<u8>::ones((n, t));

    let mut rng = rng_from_seed(seed);
    let k1 = (gamma * n as f64).floor() as usize;
    let mut order = crate::util::shuffled_indices(n, &mut rng);
    order.truncate(k1);
    for &i in &order {
        for u in 0..t {
            r[[i, u]] = 0;
        }
    }

    for stage in 2..=t {
        let k = (gamma * (1.0 - gamma).powi(stage as i32 - 1) * n as f64).floor() as usize;
        let mut observed: Vec<(f64, usize)> = (0..n)
            .filter(|&i| r[[i, stage - 2]] == 1 && r[[i, stage - 1]] == 1)
            .map(|i| (dropout_score(ds, i, stage), i))
            .collect();
        observed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i) in observed.iter().take(k) {
            for u in (stage - 1)..t {
                r[[i, u]] = 0;
            }
        }
    }
    blank_missing(ds, r)
}

/// Stagewise logistic dropout rule. Stage `t`'s observation probability for
/// a still-observed unit is `sigmoid(intercept_t + strength *
/// standardized(score_t))` with the same score index as [`apply_missing`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequentialMissingness {
    /// Per stage: (intercept, score mean, score sd, strength).
    stages: Vec<StageRule>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageRule {
    intercept: f64,
    score_mean: f64,
    score_sd: f64,
    strength: f64,
}

impl SequentialMissingness {
    /// Calibrates per-stage intercepts on a fully observed panel so that the
    /// mean conditional observation probability at each stage is `1 - gamma`.
    pub fn calibrated(ds: &LongTermDataset, gamma: f64, strength: f64) -> Result<Self, DgpError> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(DgpError::InvalidConfig(format!(
                "gamma must lie in [0,1), got {gamma}"
            )));
        }
        let n = ds.n();
        let t = ds.stages();
        let mut stages = Vec::with_capacity(t);
        for stage in 1..=t {
            let scores: Vec<f64> = if stage == 1 {
                // Stage 1 has no outcome history; score over covariates only.
                (0..n)
                    .map(|i| (0..ds.p()).map(|j| ds.x()[[i, j]]).sum())
                    .collect()
            } else {
                (0..n).map(|i| dropout_score(ds, i, stage)).collect()
            };
            let mean = crate::util::mean(&scores);
            let sd = crate::util::sample_std(&scores).max(1e-12);
            let std_scores: Vec<f64> = scores.iter().map(|v| (v - mean) / sd).collect();
            // Bisect the intercept so the average stagewise observation
            // probability hits the target.
            let target = 1.0 - gamma;
            let mean_prob = |b: f64| -> f64 {
                std_scores.iter().map(|&z| sigmoid(b + strength * z)).sum::<f64>() / n as f64
            };
            let (mut lo, mut hi) = (-30.0, 30.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if mean_prob(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            stages.push(StageRule {
                intercept: 0.5 * (lo + hi),
                score_mean: mean,
                score_sd: sd,
                strength,
            });
        }
        Ok(Self { stages })
    }

    /// Conditional observation probability
    /// `P(R_t = 1 | history, R_{t-1} = 1)` for unit `i` (1-based stage).
    pub fn stage_prob(&self, ds: &LongTermDataset, i: usize, stage: usize) -> f64 {
        let rule = &self.stages[stage - 1];
        let raw: f64 = if stage == 1 {
            (0..ds.p()).map(|j| ds.x()[[i, j]]).sum()
        } else {
            dropout_score(ds, i, stage)
        };
        sigmoid(rule.intercept + rule.strength * (raw - rule.score_mean) / rule.score_sd)
    }

    /// Marginal selection scores `P(R_t = 1 | X, A, S_1..S_{t-1})` for all
    /// units and stages: the running product of the stagewise probabilities.
    pub fn oracle_scores(&self, ds: &LongTermDataset) -> Array2<f64> {
        let n = ds.n();
        let t = ds.stages();
        let mut r = Array2::<f64>::zeros((n, t));
        for i in 0..n {
            let mut prod = 1.0;
            for stage in 1..=t {
                prod *= self.stage_prob(ds, i, stage);
                r[[i, stage - 1]] = prod;
            }
        }
        r
    }
}

/// Applies the stagewise logistic dropout rule to a fully observed panel.
/// Returns the masked panel together with the exact per-unit selection
/// scores of the rule.
pub fn apply_missing_sequential(
    ds: &LongTermDataset,
    rule: &SequentialMissingness,
    seed: u64,
) -> Result<(LongTermDataset, Array2<f64>), DgpError> {
    if ds.r().iter().any(|&v| v == 0) {
        return Err(DgpError::InvalidConfig(
            "apply_missing_sequential expects a fully observed panel".into(),
        ));
    }
    let n = ds.n();
    let t = ds.stages();
    let mut rng = rng_from_seed(seed);
    let mut r = Array2::<u8>::zeros((n, t));
    for i in 0..n {
        let mut alive = true;
        for stage in 1..=t {
            if alive {
                let prob = rule.stage_prob(ds, i, stage);
                alive = rng.random::<f64>() < prob;
            }
            r[[i, stage - 1]] = u8::from(alive);
        }
    }
    let scores = rule.oracle_scores(ds);
    Ok((blank_missing(ds, r)?, scores))
}

/// One logistic rule of the discrete toy; probability
/// `sigmoid(intercept + x*X + a*A + sum(s[j]*S_j))` over the prefix of
/// outcomes the stage conditions on.
#[derive(Debug, Clone, Copy)]
pub struct ToyRule {
    pub intercept: f64,
    pub x: f64,
    pub a: f64,
    pub s: [f64; 2],
}

impl ToyRule {
    pub fn prob(&self, x: f64, a: u8, s_prefix: &[f64]) -> f64 {
        let mut z = self.intercept + self.x * x + self.a * f64::from(a);
        for (j, &s) in s_prefix.iter().enumerate() {
            z += self.s[j] * s;
        }
        sigmoid(z)
    }
}

/// One of the 16 discrete states `(X, A, S_1, S_2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyCell {
    pub x: f64,
    pub a: u8,
    pub s1: f64,
    pub s2: f64,
}

/// Three-stage discrete panel with binary covariate, treatment, and
/// short-term outcomes, masked by stagewise logistic dropout with known
/// main-effects coefficients. Logistic fits of the factorized selection
/// scores are exactly well-specified here, and the complete pre-masking
/// outcomes are retained so empirical cell frequencies can serve as a
/// brute-force oracle for the marginal score `P(R_3=1 | X, A, S_1, S_2)`.
#[derive(Debug, Clone)]
pub struct DiscreteToy {
    pub dataset: LongTermDataset,
    /// Complete stage outcomes before masking, `n x 2`.
    pub s_complete: Array2<f64>,
    rules: [ToyRule; 3],
}

impl DiscreteToy {
    /// All 16 covariate/treatment/outcome states.
    pub fn cells(&self) -> Vec<ToyCell> {
        let mut cells = Vec::with_capacity(16);
        for x in [0.0, 1.0] {
            for a in [0u8, 1] {
                for s1 in [0.0, 1.0] {
                    for s2 in [0.0, 1.0] {
                        cells.push(ToyCell { x, a, s1, s2 });
                    }
                }
            }
        }
        cells
    }

    /// True marginal selection score of the final stage: the product of the
    /// three stagewise rules.
    pub fn r3(&self, cell: &ToyCell) -> f64 {
        self.rules[0].prob(cell.x, cell.a, &[])
            * self.rules[1].prob(cell.x, cell.a, &[cell.s1])
            * self.rules[2].prob(cell.x, cell.a, &[cell.s1, cell.s2])
    }

    /// Empirical `P(R_3=1)` among units whose complete state matches the
    /// cell, with the cell's unit count.
    pub fn empirical_r3(&self, cell: &ToyCell) -> (f64, usize) {
        let ds = &self.dataset;
        let mut hits = 0usize;
        let mut total = 0usize;
        for i in 0..ds.n() {
            if ds.x()[[i, 0]] == cell.x
                && ds.a()[i] == cell.a
                && self.s_complete[[i, 0]] == cell.s1
                && self.s_complete[[i, 1]] == cell.s2
            {
                total += 1;
                hits += usize::from(ds.observed(i, 3));
            }
        }
        let freq = if total == 0 {
            f64::NAN
        } else {
            hits as f64 / total as f64
        };
        (freq, total)
    }
}

/// Generates the discrete factorization toy (T = 3, one binary covariate).
pub fn gen_discrete_toy(n: usize, seed: u64) -> DiscreteToy {
    let rules = [
        ToyRule {
            intercept: 1.2,
            x: 0.5,
            a: -0.4,
            s: [0.0, 0.0],
        },
        ToyRule {
            intercept: 0.9,
            x: 0.3,
            a: 0.2,
            s: [0.6, 0.0],
        },
        ToyRule {
            intercept: 0.8,
            x: -0.3,
            a: 0.3,
            s: [0.5, 0.7],
        },
    ];
    let mut rng = rng_from_seed(seed);
    let mut x = Array2::<f64>::zeros((n, 1));
    let mut a = Array1::<u8>::zeros(n);
    let mut s_complete = Array2::<f64>::zeros((n, 2));
    let mut y_complete = Array1::<f64>::zeros(n);
    let mut r = Array2::<u8>::zeros((n, 3));
    for i in 0..n {
        let xi = f64::from(rng.random::<f64>() < 0.5);
        let ai = u8::from(rng.random::<f64>() < sigmoid(0.6 * xi - 0.3));
        let s1 = f64::from(rng.random::<f64>() < sigmoid(0.4 + 0.5 * xi - 0.7 * f64::from(ai)));
        let s2 = f64::from(
            rng.random::<f64>()
                < sigmoid(-0.2 + 0.3 * xi + 0.4 * f64::from(ai) + 0.8 * s1),
        );
        let yi = std_normal(&mut rng);
        x[[i, 0]] = xi;
        a[i] = ai;
        s_complete[[i, 0]] = s1;
        s_complete[[i, 1]] = s2;
        y_complete[i] = yi;
        let mut alive = rng.random::<f64>() < rules[0].prob(xi, ai, &[]);
        r[[i, 0]] = u8::from(alive);
        if alive {
            alive = rng.random::<f64>() < rules[1].prob(xi, ai, &[s1]);
        }
        r[[i, 1]] = u8::from(alive);
        if alive {
            alive = rng.random::<f64>() < rules[2].prob(xi, ai, &[s1, s2]);
        }
        r[[i, 2]] = u8::from(alive);
    }
    let s_obs = Array2::from_shape_fn((n, 2), |(i, t)| {
        if r[[i, t]] == 1 {
            Some(s_complete[[i, t]])
        } else {
            None
        }
    });
    let y_obs = Array1::from_iter((0..n).map(|i| {
        if r[[i, 2]] == 1 {
            Some(y_complete[i])
        } else {
            None
        }
    }));
    let dataset = LongTermDataset::new(x, a, s_obs, y_obs, r).expect("toy panel is valid");
    DiscreteToy {
        dataset,
        s_complete,
        rules,
    }
}

/// One fully generated replication.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub dataset: LongTermDataset,
    pub truth: GroundTruth,
    pub draw: DgpDraw,
    /// True treatment-assignment probabilities `P(A=1 | X)`.
    pub oracle_propensity: Array1<f64>,
    /// Exact selection scores; available only under the sequential-logistic
    /// mechanism (the rank rule admits none).
    pub oracle_selection: Option<Array2<f64>>,
}

/// Generates covariates, treatment, outcomes, and dropout from a config.
pub fn simulate(cfg: &DgpConfig) -> Result<Simulated, DgpError> {
    cfg.validate()?;
    let x = gen_covariates(cfg.n, cfg.p, derive_seed(cfg.seed, &[10]));
    simulate_with_covariates(cfg, x, None)
}

/// Like [`simulate`] but over externally supplied covariates (and
/// optionally treatments, e.g. from a real dataset); outcomes and dropout
/// are always synthesized so ground truth exists. `cfg.n`/`cfg.p` must
/// match the matrix.
pub fn simulate_with_covariates(
    cfg: &DgpConfig,
    x: Array2<f64>,
    a: Option<Array1<u8>>,
) -> Result<Simulated, DgpError> {
    cfg.validate()?;
    if x.nrows() != cfg.n || x.ncols() != cfg.p {
        return Err(DgpError::InvalidConfig(format!(
            "covariates are {}x{} but config says {}x{}",
            x.nrows(),
            x.ncols(),
            cfg.n,
            cfg.p
        )));
    }
    let draw = sample_draw(cfg.p, cfg.treatment_coef_scale, derive_seed(cfg.seed, &[11]));
    let a = match a {
        Some(a) => {
            if a.len() != cfg.n {
                return Err(DgpError::InvalidConfig(format!(
                    "{} treatments for {} units",
                    a.len(),
                    cfg.n
                )));
            }
            a
        }
        None => gen_treatment(&x, &draw.theta, cfg.treatment_intercept, derive_seed(cfg.seed, &[12])),
    };
    let (full, truth) = gen_outcomes(&x, &a, &draw, cfg, derive_seed(cfg.seed, &[13]))?;
    let e1 = oracle_propensity(&x, &draw.theta, cfg.treatment_intercept);
    let (dataset, oracle_selection) = match cfg.missing {
        MissingMechanism::ScoreRank => (
            apply_missing(&full, cfg.gamma, derive_seed(cfg.seed, &[14]))?,
            None,
        ),
        MissingMechanism::SequentialLogistic { strength } => {
            let rule = SequentialMissingness::calibrated(&full, cfg.gamma, strength)?;
            let (ds, scores) =
                apply_missing_sequential(&full, &rule, derive_seed(cfg.seed, &[14]))?;
            (ds, Some(scores))
        }
    };
    Ok(Simulated {
        dataset,
        truth,
        draw,
        oracle_propensity: e1,
        oracle_selection,
    })
}
