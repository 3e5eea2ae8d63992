//! Sequential representation-balancing network.
//!
//! Each stage trains one block: an encoder mapping `(features, arm)` to a
//! representation, plus two prediction heads (one per arm). The block loss
//! is the factual prediction error on rows whose stage outcome is observed,
//! plus two squared linear MMD penalties pushing the representation means
//! of observed-vs-missing rows and treated-vs-control rows together.
//! Blocks chain across stages: training inputs carry observed outcomes
//! where available and the factual head's prediction otherwise, while
//! counterfactual evaluation feeds each arm its own head outputs forward.

use crate::dataset::LongTermDataset;
use crate::estimators::{Diagnostics, EffectEstimate, EstimatorConfig, EstimatorError, Method};
use crate::nuisance::{adam_fit, AdamSettings, FitTrace, MlpSpec, ModelError, TrainConfig};
use crate::nuisance::Activation;
use crate::util::{derive_seed, rng_from_seed, shuffled_indices};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    /// Observed-vs-missing imbalance penalty.
    pub lambda1: f64,
    /// Treated-vs-control imbalance penalty.
    pub lambda2: f64,
    /// Representation width.
    pub d_rep: usize,
    /// Hidden width of each prediction head.
    pub head_hidden: usize,
    pub train: TrainConfig,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            d_rep: 32,
            head_hidden: 25,
            train: TrainConfig {
                activation: Activation::Elu,
                ..TrainConfig::default()
            },
        }
    }
}

/// Squared linear MMD: the squared Euclidean distance between the two
/// group means. Zero (callers flag it) when a group is empty.
pub fn linear_mmd(rep_a: ArrayView2<f64>, rep_b: ArrayView2<f64>) -> f64 {
    if rep_a.nrows() == 0 || rep_b.nrows() == 0 {
        return 0.0;
    }
    let ma = rep_a.mean_axis(Axis(0)).expect("non-empty");
    let mb = rep_b.mean_axis(Axis(0)).expect("non-empty");
    (&ma - &mb).map(|d| d * d).sum()
}

/// Inputs of one stage block. `features` must be fully populated (gaps are
/// filled by earlier blocks before they reach here); `targets` are present
/// exactly on `observed = 1` rows.
#[derive(Debug, Clone)]
pub struct StageInput {
    pub features: Array2<f64>,
    pub arm: Array1<u8>,
    pub observed: Array1<u8>,
    pub targets: Array1<Option<f64>>,
}

impl StageInput {
    fn subset(&self, rows: &[usize]) -> StageInput {
        StageInput {
            features: Array2::from_shape_fn((rows.len(), self.features.ncols()), |(i, j)| {
                self.features[[rows[i], j]]
            }),
            arm: Array1::from_iter(rows.iter().map(|&i| self.arm[i])),
            observed: Array1::from_iter(rows.iter().map(|&i| self.observed[i])),
            targets: Array1::from_iter(rows.iter().map(|&i| self.targets[i])),
        }
    }
}

/// Architecture of one block; parameters live in one flat vector laid out
/// `[encoder | head0 | head1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub encoder: MlpSpec,
    pub head: MlpSpec,
}

impl BlockSpec {
    pub fn new(input_width: usize, cfg: &BalanceConfig) -> Self {
        let act = cfg.train.activation;
        Self {
            // Encoder sees the arm as an extra input column.
            encoder: MlpSpec {
                sizes: vec![input_width + 1, cfg.d_rep, cfg.d_rep],
                activation: act,
                activate_last: true,
            },
            head: MlpSpec {
                sizes: vec![cfg.d_rep, cfg.head_hidden, 1],
                activation: act,
                activate_last: false,
            },
        }
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + 2 * self.head.param_count()
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut params = self.encoder.init_params(derive_seed(seed, &[0]));
        params.extend(self.head.init_params(derive_seed(seed, &[1])));
        params.extend(self.head.init_params(derive_seed(seed, &[2])));
        params
    }

    fn slices(&self) -> (usize, usize) {
        (self.encoder.param_count(), self.head.param_count())
    }
}

/// A trained block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub spec: BlockSpec,
    pub params: Vec<f64>,
}

impl BlockParams {
    fn encode(&self, features: &Array2<f64>, arm_col: &Array1<f64>) -> Array2<f64> {
        let n = features.nrows();
        let mut z = Array2::<f64>::zeros((n, features.ncols() + 1));
        for i in 0..n {
            for j in 0..features.ncols() {
                z[[i, j]] = features[[i, j]];
            }
            z[[i, features.ncols()]] = arm_col[i];
        }
        let (enc_len, _) = self.spec.slices();
        self.spec.encoder.forward(&self.params[..enc_len], z.view())
    }

    fn head_output(&self, phi: &Array2<f64>, arm: u8) -> Array1<f64> {
        let (enc_len, head_len) = self.spec.slices();
        let at = enc_len + head_len * arm as usize;
        let out = self
            .spec
            .head
            .forward(&self.params[at..at + head_len], phi.view());
        out.column(0).to_owned()
    }

    /// Head output under a fixed counterfactual arm for every row.
    pub fn predict_arm(&self, features: &Array2<f64>, arm: u8) -> Array1<f64> {
        let arm_col = Array1::from_elem(features.nrows(), f64::from(arm));
        let phi = self.encode(features, &arm_col);
        self.head_output(&phi, arm)
    }

    /// Head output under each row's own arm.
    pub fn predict_factual(&self, features: &Array2<f64>, arm: &Array1<u8>) -> Array1<f64> {
        let arm_col = arm.map(|&a| f64::from(a));
        let phi = self.encode(features, &arm_col);
        let h0 = self.head_output(&phi, 0);
        let h1 = self.head_output(&phi, 1);
        Array1::from_iter((0..features.nrows()).map(|i| if arm[i] == 1 { h1[i] } else { h0[i] }))
    }
}

/// Loss of one block on a stage batch: factual mean squared error over
/// observed rows plus the two MMD penalties. Returns the loss and the full
/// analytic parameter gradient; the prediction term backpropagates through
/// each row's factual head only, the penalties through the encoder for all
/// rows.
pub fn block_loss(
    spec: &BlockSpec,
    params: &[f64],
    input: &StageInput,
    lambda1: f64,
    lambda2: f64,
) -> (f64, Vec<f64>) {
    let (loss, grad, _) = block_loss_inner(spec, params, input, lambda1, lambda2, true);
    (loss, grad)
}

/// Loss only, for finite-difference probes.
pub fn block_loss_value(
    spec: &BlockSpec,
    params: &[f64],
    input: &StageInput,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    block_loss_inner(spec, params, input, lambda1, lambda2, false).0
}

#[derive(Debug, Clone, Copy, Default)]
struct MmdFlags {
    empty_missing_group: bool,
    empty_arm_group: bool,
}

fn block_loss_inner(
    spec: &BlockSpec,
    params: &[f64],
    input: &StageInput,
    lambda1: f64,
    lambda2: f64,
    with_grad: bool,
) -> (f64, Vec<f64>, MmdFlags) {
    let n = input.features.nrows();
    let k = spec.encoder.sizes[spec.encoder.sizes.len() - 1];
    let (enc_len, head_len) = spec.slices();
    let arm_col = input.arm.map(|&a| f64::from(a));
    let mut z = Array2::<f64>::zeros((n, input.features.ncols() + 1));
    for i in 0..n {
        for j in 0..input.features.ncols() {
            z[[i, j]] = input.features[[i, j]];
        }
        z[[i, input.features.ncols()]] = arm_col[i];
    }
    let enc_cache = spec.encoder.forward_cached(&params[..enc_len], z.view());
    let phi = enc_cache.activations.last().unwrap().clone();
    let h0_cache = spec
        .head
        .forward_cached(&params[enc_len..enc_len + head_len], phi.view());
    let h1_cache = spec
        .head
        .forward_cached(&params[enc_len + head_len..], phi.view());
    let pred0 = h0_cache.activations.last().unwrap();
    let pred1 = h1_cache.activations.last().unwrap();

    let obs_rows: Vec<usize> = (0..n).filter(|&i| input.observed[i] == 1).collect();
    let mis_rows: Vec<usize> = (0..n).filter(|&i| input.observed[i] == 0).collect();
    let arm1_rows: Vec<usize> = (0..n).filter(|&i| input.arm[i] == 1).collect();
    let arm0_rows: Vec<usize> = (0..n).filter(|&i| input.arm[i] == 0).collect();
    let n_obs = obs_rows.len();

    let mut mse = 0.0;
    for &i in &obs_rows {
        let pred = if input.arm[i] == 1 {
            pred1[[i, 0]]
        } else {
            pred0[[i, 0]]
        };
        let y = input.targets[i].expect("observed rows carry targets");
        mse += (pred - y) * (pred - y);
    }
    if n_obs > 0 {
        mse /= n_obs as f64;
    }

    let group_mean = |rows: &[usize]| -> Option<Array1<f64>> {
        if rows.is_empty() {
            return None;
        }
        let mut m = Array1::<f64>::zeros(k);
        for &i in rows {
            for c in 0..k {
                m[c] += phi[[i, c]];
            }
        }
        Some(m / rows.len() as f64)
    };
    let mut flags = MmdFlags::default();
    let ipm1 = match (group_mean(&obs_rows), group_mean(&mis_rows)) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => {
            flags.empty_missing_group = true;
            None
        }
    };
    let ipm2 = match (group_mean(&arm1_rows), group_mean(&arm0_rows)) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => {
            flags.empty_arm_group = true;
            None
        }
    };
    let ipm1_val = ipm1
        .as_ref()
        .map_or(0.0, |(a, b)| (a - b).map(|d| d * d).sum());
    let ipm2_val = ipm2
        .as_ref()
        .map_or(0.0, |(a, b)| (a - b).map(|d| d * d).sum());
    let loss = mse + lambda1 * ipm1_val + lambda2 * ipm2_val;
    if !with_grad {
        return (loss, Vec::new(), flags);
    }

    let mut grad = vec![0.0; spec.param_count()];
    let mut d_pred0 = Array2::<f64>::zeros((n, 1));
    let mut d_pred1 = Array2::<f64>::zeros((n, 1));
    for &i in &obs_rows {
        let y = input.targets[i].expect("observed rows carry targets");
        if input.arm[i] == 1 {
            d_pred1[[i, 0]] = 2.0 * (pred1[[i, 0]] - y) / n_obs as f64;
        } else {
            d_pred0[[i, 0]] = 2.0 * (pred0[[i, 0]] - y) / n_obs as f64;
        }
    }
    let mut d_phi = spec.head.backward(
        &params[enc_len..enc_len + head_len],
        &h0_cache,
        d_pred0,
        &mut grad[enc_len..enc_len + head_len],
    );
    let d_phi_h1 = spec.head.backward(
        &params[enc_len + head_len..],
        &h1_cache,
        d_pred1,
        &mut grad[enc_len + head_len..],
    );
    d_phi += &d_phi_h1;

    // d/dPhi of a squared mean gap: rows of the first group move the gap by
    // 1/n_first per unit, rows of the second by -1/n_second.
    let mut add_mmd_grad = |pair: &Option<(Array1<f64>, Array1<f64>)>,
                            first: &[usize],
                            second: &[usize],
                            lambda: f64| {
        if lambda == 0.0 {
            return;
        }
        if let Some((ma, mb)) = pair {
            let gap = ma - mb;
            let ca = 2.0 * lambda / first.len() as f64;
            let cb = 2.0 * lambda / second.len() as f64;
            for &i in first {
                for c in 0..k {
                    d_phi[[i, c]] += ca * gap[c];
                }
            }
            for &i in second {
                for c in 0..k {
                    d_phi[[i, c]] -= cb * gap[c];
                }
            }
        }
    };
    add_mmd_grad(&ipm1, &obs_rows, &mis_rows, lambda1);
    add_mmd_grad(&ipm2, &arm1_rows, &arm0_rows, lambda2);

    spec.encoder
        .backward(&params[..enc_len], &enc_cache, d_phi, &mut grad[..enc_len]);
    (loss, grad, flags)
}

/// Trains one block by full-batch adaptive-moment descent with early
/// stopping (patience on the factual validation error over a held-out
/// slice of observed rows). Deterministic in `seed`.
pub fn train_block(
    input: &StageInput,
    cfg: &BalanceConfig,
    seed: u64,
) -> Result<(BlockParams, FitTrace, Vec<String>), ModelError> {
    cfg.train.validate()?;
    let n = input.features.nrows();
    let obs_rows: Vec<usize> = (0..n).filter(|&i| input.observed[i] == 1).collect();
    for arm in 0..2u8 {
        if !obs_rows.iter().any(|&i| input.arm[i] == arm) {
            return Err(ModelError::TooFewRows {
                need: 1,
                got: 0,
            });
        }
    }
    let spec = BlockSpec::new(input.features.ncols(), cfg);
    let init = spec.init_params(derive_seed(seed, &[0]));

    let n_val = (cfg.train.val_fraction * obs_rows.len() as f64).floor() as usize;
    let (train_rows, val_rows) = if n_val == 0 || obs_rows.len() - n_val < 2 {
        ((0..n).collect::<Vec<_>>(), Vec::new())
    } else {
        let mut rng = rng_from_seed(derive_seed(seed, &[1]));
        let order = shuffled_indices(obs_rows.len(), &mut rng);
        let held: Vec<usize> = order[obs_rows.len() - n_val..]
            .iter()
            .map(|&j| obs_rows[j])
            .collect();
        let train: Vec<usize> = (0..n).filter(|i| !held.contains(i)).collect();
        (train, held)
    };
    let train_input = input.subset(&train_rows);
    let settings = AdamSettings::from_train(&cfg.train);
    let mut flags = Vec::new();
    {
        let (_, _, f) = block_loss_inner(&spec, &init, &train_input, cfg.lambda1, cfg.lambda2, false);
        if f.empty_missing_group && cfg.lambda1 != 0.0 {
            flags.push("observed-vs-missing penalty vacuous: a group is empty".to_string());
        }
        if f.empty_arm_group && cfg.lambda2 != 0.0 {
            flags.push("treated-vs-control penalty vacuous: a group is empty".to_string());
        }
    }
    let (params, trace) = if val_rows.is_empty() {
        adam_fit(
            init,
            |p| block_loss(&spec, p, &train_input, cfg.lambda1, cfg.lambda2),
            None,
            &settings,
        )?
    } else {
        let val_input = input.subset(&val_rows);
        let mut vl = |p: &[f64]| block_loss_value(&spec, p, &val_input, 0.0, 0.0);
        adam_fit(
            init,
            |p| block_loss(&spec, p, &train_input, cfg.lambda1, cfg.lambda2),
            Some(&mut vl as &mut dyn FnMut(&[f64]) -> f64),
            &settings,
        )?
    };
    Ok((BlockParams { spec, params }, trace, flags))
}

/// Runs the block chain over the given 1-based stages (in order). The last
/// stage must be the long-term one; earlier stages extend the feature panel
/// with observed-or-predicted outcome columns.
fn run_chain(
    ds: &LongTermDataset,
    cfg: &EstimatorConfig,
    stages: &[usize],
    method: Method,
) -> Result<(EffectEstimate, Vec<BlockParams>), EstimatorError> {
    let n = ds.n();
    let p = ds.p();
    let mut diag = Diagnostics::default();
    // Factual fill columns (training inputs) and per-arm counterfactual
    // chains, one column per completed block.
    let mut factual_cols: Vec<Array1<f64>> = Vec::new();
    let mut cf_cols: [Vec<Array1<f64>>; 2] = [Vec::new(), Vec::new()];
    let mut last_cf: Option<[Array1<f64>; 2]> = None;
    let mut blocks: Vec<BlockParams> = Vec::with_capacity(stages.len());

    for (b, &stage) in stages.iter().enumerate() {
        let width = p + factual_cols.len();
        let mut features = Array2::<f64>::zeros((n, width));
        for i in 0..n {
            for j in 0..p {
                features[[i, j]] = ds.x()[[i, j]];
            }
            for (c, col) in factual_cols.iter().enumerate() {
                features[[i, p + c]] = col[i];
            }
        }
        let observed = Array1::from_iter((0..n).map(|i| u8::from(ds.observed(i, stage))));
        let targets = Array1::from_iter((0..n).map(|i| {
            if ds.observed(i, stage) {
                Some(stage_outcome(ds, i, stage))
            } else {
                None
            }
        }));
        let input = StageInput {
            features,
            arm: ds.a().clone(),
            observed,
            targets,
        };
        diag.rows_used.push((
            format!("stage{stage}"),
            input.observed.iter().map(|&v| usize::from(v)).sum(),
        ));
        let seed = derive_seed(cfg.seed, &[method.stream_id(), b as u64]);
        let (block, _, flags) = train_block(&input, &cfg.balance, seed)?;
        for f in flags {
            diag.flags.push(format!("stage {stage}: {f}"));
        }

        // Factual fill for later training inputs.
        let factual_pred = block.predict_factual(&input.features, ds.a());
        let fill = Array1::from_iter((0..n).map(|i| {
            if ds.observed(i, stage) {
                stage_outcome(ds, i, stage)
            } else {
                factual_pred[i]
            }
        }));
        factual_cols.push(fill);

        // Counterfactual chains: each arm feeds its own head outputs.
        let mut cf_pair: Vec<Array1<f64>> = Vec::with_capacity(2);
        for arm in 0..2u8 {
            let mut cf_features = Array2::<f64>::zeros((n, width));
            for i in 0..n {
                for j in 0..p {
                    cf_features[[i, j]] = ds.x()[[i, j]];
                }
                for (c, col) in cf_cols[arm as usize].iter().enumerate() {
                    cf_features[[i, p + c]] = col[i];
                }
            }
            let preds = block.predict_arm(&cf_features, arm);
            cf_cols[arm as usize].push(preds.clone());
            cf_pair.push(preds);
        }
        last_cf = Some([cf_pair.remove(0), cf_pair.remove(0)]);
        blocks.push(block);
    }
    let [cf0, cf1] = last_cf.expect("at least one stage");
    let cate = &cf1 - &cf0;
    Ok((EffectEstimate::from_cate(method, cate, diag), blocks))
}

fn stage_outcome(ds: &LongTermDataset, i: usize, t: usize) -> f64 {
    if t <= ds.t0() {
        ds.s()[[i, t - 1]].expect("caller checked observation")
    } else {
        ds.y()[i].expect("caller checked observation")
    }
}

/// Full sequential network: one block per outcome stage.
pub fn run_balancenet(
    ds: &LongTermDataset,
    cfg: &EstimatorConfig,
) -> Result<EffectEstimate, EstimatorError> {
    Ok(run_balancenet_blocks(ds, cfg)?.0)
}

/// As [`run_balancenet`], additionally returning the trained per-stage
/// blocks (for parameter dumps and inspection).
pub fn run_balancenet_blocks(
    ds: &LongTermDataset,
    cfg: &EstimatorConfig,
) -> Result<(EffectEstimate, Vec<BlockParams>), EstimatorError> {
    let stages: Vec<usize> = (1..=ds.stages()).collect();
    run_chain(ds, cfg, &stages, Method::BalanceNet)
}

/// Counterfactual-regression baseline: a single block regressing the
/// long-term outcome on covariates over its observed rows, with only the
/// treated-vs-control penalty active.
pub fn run_cfr(
    ds: &LongTermDataset,
    cfg: &EstimatorConfig,
) -> Result<EffectEstimate, EstimatorError> {
    let mut cfr_cfg = cfg.clone();
    cfr_cfg.balance.lambda1 = 0.0;
    Ok(run_chain(ds, &cfr_cfg, &[ds.stages()], Method::Cfr)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::gradient_check;
    use ndarray::arr2;
    use rand::Rng;

    #[test]
    fn mmd_of_identical_groups_is_zero() {
        let a = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(linear_mmd(a.view(), a.view()), 0.0);
    }

    #[test]
    fn mmd_known_value() {
        let a = arr2(&[[0.0, 0.0]]);
        let b = arr2(&[[1.0, 1.0]]);
        assert_eq!(linear_mmd(a.view(), b.view()), 2.0);
    }

    #[test]
    fn mmd_matches_direct_recomputation() {
        let mut rng = rng_from_seed(4);
        let a = Array2::from_shape_fn((7, 3), |_| rng.random::<f64>());
        let b = Array2::from_shape_fn((5, 3), |_| rng.random::<f64>());
        let direct: f64 = (0..3)
            .map(|c| {
                let ma = a.column(c).sum() / 7.0;
                let mb = b.column(c).sum() / 5.0;
                (ma - mb) * (ma - mb)
            })
            .sum();
        assert!((linear_mmd(a.view(), b.view()) - direct).abs() < 1e-12);
    }

    #[test]
    fn mmd_empty_group_is_zero() {
        let a = arr2(&[[1.0, 2.0]]);
        let empty = Array2::<f64>::zeros((0, 2));
        assert_eq!(linear_mmd(a.view(), empty.view()), 0.0);
    }

    #[test]
    fn mmd_invariant_under_row_duplication() {
        let a = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let b = arr2(&[[2.0, 2.0]]);
        let a2 = arr2(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        let b2 = arr2(&[[2.0, 2.0], [2.0, 2.0]]);
        assert!((linear_mmd(a.view(), b.view()) - linear_mmd(a2.view(), b2.view())).abs() < 1e-12);
    }

    fn probe_input(n: usize, d: usize, seed: u64) -> StageInput {
        let mut rng = rng_from_seed(seed);
        let features = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
        let arm = Array1::from_shape_fn(n, |_| u8::from(rng.random::<f64>() < 0.5));
        let observed = Array1::from_shape_fn(n, |_| u8::from(rng.random::<f64>() < 0.7));
        let targets = Array1::from_shape_fn(n, |i| {
            if observed[i] == 1 {
                Some(rng.random::<f64>())
            } else {
                None
            }
        });
        StageInput {
            features,
            arm,
            observed,
            targets,
        }
    }

    fn tiny_cfg() -> BalanceConfig {
        BalanceConfig {
            d_rep: 6,
            head_hidden: 4,
            ..Default::default()
        }
    }

    #[test]
    fn zero_penalties_reduce_loss_to_factual_mse() {
        let input = probe_input(12, 3, 1);
        let cfg = tiny_cfg();
        let spec = BlockSpec::new(3, &cfg);
        let params = spec.init_params(2);
        let (loss, _) = block_loss(&spec, &params, &input, 0.0, 0.0);

        // Direct recomputation of the factual mse.
        let block = BlockParams {
            spec: spec.clone(),
            params: params.clone(),
        };
        let preds = block.predict_factual(&input.features, &input.arm);
        let obs: Vec<usize> = (0..12).filter(|&i| input.observed[i] == 1).collect();
        let mse = obs
            .iter()
            .map(|&i| (preds[i] - input.targets[i].unwrap()).powi(2))
            .sum::<f64>()
            / obs.len() as f64;
        assert!((loss - mse).abs() < 1e-12);
    }

    #[test]
    fn block_gradient_passes_finite_difference_audit() {
        let input = probe_input(8, 2, 3);
        let cfg = tiny_cfg();
        let spec = BlockSpec::new(2, &cfg);
        let params = spec.init_params(5);
        let (_, analytic) = block_loss(&spec, &params, &input, 0.7, 1.3);
        let err = gradient_check(
            |p| block_loss_value(&spec, p, &input, 0.7, 1.3),
            &analytic,
            &params,
            1e-5,
        );
        assert!(err < 1e-4, "audit error {err}");
    }

    #[test]
    fn block_loss_is_permutation_invariant() {
        let input = probe_input(10, 2, 7);
        let cfg = tiny_cfg();
        let spec = BlockSpec::new(2, &cfg);
        let params = spec.init_params(8);
        let (base, _) = block_loss(&spec, &params, &input, 0.5, 0.5);
        let perm: Vec<usize> = (0..10).rev().collect();
        let shuffled = input.subset(&perm);
        let (permuted, _) = block_loss(&spec, &params, &shuffled, 0.5, 0.5);
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn training_shrinks_group_gap_under_large_penalty() {
        // Observed and missing rows start with very different features, so
        // the initial representation means differ; a large lambda1 must
        // shrink that gap relative to initialization.
        let n = 60;
        let mut rng = rng_from_seed(9);
        let features = Array2::from_shape_fn((n, 2), |(i, _)| {
            if i < n / 2 {
                rng.random::<f64>() + 2.0
            } else {
                rng.random::<f64>() - 2.0
            }
        });
        let observed = Array1::from_shape_fn(n, |i| u8::from(i < n / 2));
        let arm = Array1::from_shape_fn(n, |i| u8::from(i % 2 == 0));
        let targets = Array1::from_shape_fn(n, |i| {
            if observed[i] == 1 {
                Some(features[[i, 0]])
            } else {
                None
            }
        });
        let input = StageInput {
            features,
            arm,
            observed,
            targets,
        };
        let cfg = BalanceConfig {
            lambda1: 50.0,
            lambda2: 0.0,
            train: TrainConfig {
                max_epochs: 300,
                val_fraction: 0.0,
                activation: Activation::Elu,
                ..Default::default()
            },
            ..tiny_cfg()
        };
        let spec = BlockSpec::new(2, &cfg);
        let init = spec.init_params(derive_seed(4, &[0]));
        let gap_of = |params: &[f64]| {
            let block = BlockParams {
                spec: spec.clone(),
                params: params.to_vec(),
            };
            let arm_col = input.arm.map(|&a| f64::from(a));
            let phi = block.encode(&input.features, &arm_col);
            let obs: Vec<usize> = (0..n).filter(|&i| input.observed[i] == 1).collect();
            let mis: Vec<usize> = (0..n).filter(|&i| input.observed[i] == 0).collect();
            let take = |rows: &[usize]| {
                Array2::from_shape_fn((rows.len(), phi.ncols()), |(r, c)| phi[[rows[r], c]])
            };
            linear_mmd(take(&obs).view(), take(&mis).view())
        };
        let before = gap_of(&init);
        let (block, _, _) = train_block(&input, &cfg, 4).unwrap();
        let after = gap_of(&block.params);
        assert!(after < before, "gap before {before} after {after}");
    }

    #[test]
    fn train_block_is_deterministic() {
        let input = probe_input(30, 3, 21);
        let cfg = BalanceConfig {
            train: TrainConfig {
                max_epochs: 60,
                activation: Activation::Elu,
                ..Default::default()
            },
            ..tiny_cfg()
        };
        let (b1, t1, _) = train_block(&input, &cfg, 7).unwrap();
        let (b2, t2, _) = train_block(&input, &cfg, 7).unwrap();
        assert_eq!(b1.params, b2.params);
        assert_eq!(t1.train_loss, t2.train_loss);
    }

    #[test]
    fn chain_and_single_block_runs_are_deterministic() {
        let mut dgp_cfg = crate::dgp::DgpConfig::binary_mix(150, 3, 3, 8);
        dgp_cfg.gamma = 0.2;
        dgp_cfg.cate_draws = 2;
        let ds = crate::dgp::simulate(&dgp_cfg).unwrap().dataset;
        let est_cfg = EstimatorConfig {
            balance: BalanceConfig {
                d_rep: 8,
                head_hidden: 6,
                train: TrainConfig {
                    max_epochs: 60,
                    activation: Activation::Elu,
                    ..Default::default()
                },
                ..Default::default()
            },
            seed: 5,
            ..Default::default()
        };
        let bn = run_balancenet(&ds, &est_cfg).unwrap();
        // One block per stage, and a single final block for the baseline.
        assert_eq!(bn.diagnostics.rows_used.len(), 3);
        let cfr = run_cfr(&ds, &est_cfg).unwrap();
        assert_eq!(cfr.diagnostics.rows_used.len(), 1);
        assert_eq!(cfr.diagnostics.rows_used[0].0, "stage3");
        assert!(bn.tau_hat.is_finite() && cfr.tau_hat.is_finite());
        let bn2 = run_balancenet(&ds, &est_cfg).unwrap();
        assert_eq!(bn.cate_hat, bn2.cate_hat);
    }

    #[test]
    fn missing_arm_in_observed_rows_is_an_error() {
        let mut input = probe_input(10, 2, 2);
        for i in 0..10 {
            if input.observed[i] == 1 {
                input.arm[i] = 1;
            }
        }
        let cfg = tiny_cfg();
        assert!(train_block(&input, &cfg, 1).is_err());
    }
}
