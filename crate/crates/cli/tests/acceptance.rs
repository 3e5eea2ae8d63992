//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured values (visible with `--nocapture`).
//!
//! Criteria 7, 8, and 10 drive the installed `ltce` binary over generated
//! config files; the rest exercise the library API directly.

use ltce_core::balance::{block_loss, block_loss_value, BlockSpec, StageInput};
use ltce_core::dgp::{self, DgpConfig, MissingMechanism};
use ltce_core::estimators::{
    naive_ipw, proposed_ipw, seqmsm, seqri, EstimatorConfig, RegressorSpec,
};
use ltce_core::metrics::{eps_cate, paired_t_test};
use ltce_core::nuisance::{
    gradient_check, logistic_loss_grad, regression_loss, regression_loss_grad, Activation,
    LogisticConfig, MlpSpec,
};
use ltce_core::util::{derive_seed, rng_from_seed, std_normal};
use ltce_core::{DgpStyle, NuisanceScores};
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn pass(criterion: usize, name: &str, detail: String) {
    println!("acceptance criterion {criterion} ({name}): PASS - {detail}");
}

fn linear_cfg() -> EstimatorConfig {
    EstimatorConfig {
        regressor: RegressorSpec::Linear,
        ..Default::default()
    }
}

#[test]
fn criterion_01_identification_oracle() {
    let start = Instant::now();
    let mut cfg = DgpConfig::continuous(20_000, 10, 3, 42);
    cfg.gamma = 0.2;
    cfg.missing = MissingMechanism::SequentialLogistic { strength: 1.0 };
    cfg.cate_draws = 4;
    let sim = dgp::simulate(&cfg).unwrap();
    let nuis = NuisanceScores::from_oracle(
        sim.oracle_propensity.clone(),
        sim.oracle_selection.clone().unwrap(),
        0.01,
    );
    let est = proposed_ipw(&sim.dataset, &nuis, &linear_cfg()).unwrap();
    let tau = sim.truth.tau();
    let err = (est.tau_hat - tau).abs();
    let tol = 0.05 * tau.abs().max(1.0);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(err <= tol, "|tau_hat - tau| = {err} > {tol} (tau {tau})");
    assert!(elapsed < 60.0, "took {elapsed:.1}s, budget 60s");
    pass(
        1,
        "identification oracle",
        format!("tau {tau:.3}, error {err:.4} <= {tol:.4}, {elapsed:.1}s"),
    );
}

#[test]
fn criterion_02_factorization_oracle() {
    let start = Instant::now();
    let toy = dgp::gen_discrete_toy(100_000, 99);
    let nuis = NuisanceScores::fit(&toy.dataset, &LogisticConfig::default()).unwrap();
    let mut worst = 0.0f64;
    for cell in toy.cells() {
        let (freq, count) = toy.empirical_r3(&cell);
        assert!(count > 1000, "degenerate toy cell");
        let fitted = nuis
            .eval_selection(&[cell.x], cell.a, &[cell.s1, cell.s2], 3)
            .unwrap();
        worst = worst.max((fitted - freq).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(worst < 0.02, "worst cell error {worst}");
    assert!(elapsed < 30.0, "took {elapsed:.1}s, budget 30s");
    pass(
        2,
        "factorization oracle",
        format!("max cell error {worst:.4} < 0.02, {elapsed:.1}s"),
    );
}

#[test]
fn criterion_03_monotone_invariant_suite() {
    let start = Instant::now();
    let mut rng = rng_from_seed(12345);
    for probe in 0..100u64 {
        let style = if rng.random::<f64>() < 0.5 {
            DgpStyle::Continuous
        } else {
            DgpStyle::BinaryMix
        };
        let gamma = rng.random::<f64>() * 0.6;
        let stages = 2 + (rng.random::<f64>() * 3.0) as usize; // 2..=4
        let n = 150 + (rng.random::<f64>() * 250.0) as usize;
        let seed = derive_seed(777, &[probe]);
        let mut cfg = match style {
            DgpStyle::Continuous => DgpConfig::continuous(n, 4, stages, seed),
            DgpStyle::BinaryMix => DgpConfig::binary_mix(n, 4, stages, seed),
        };
        cfg.gamma = gamma;
        cfg.cate_draws = 1;
        let sim = dgp::simulate(&cfg).unwrap();
        assert!(
            ltce_core::dataset::validate_monotone(sim.dataset.r()).is_ok(),
            "probe {probe}"
        );
        // Exact observed-count formula under the rank rule.
        let mut removed = 0usize;
        for t in 1..=stages {
            removed += (gamma * (1.0 - gamma).powi(t as i32 - 1) * n as f64).floor() as usize;
            let observed = sim.dataset.observed_subset(t).unwrap().len();
            assert_eq!(observed, n - removed, "probe {probe} stage {t}");
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "took {elapsed:.1}s, budget 30s");
    pass(
        3,
        "monotone invariant suite",
        format!("100 random configs hold the dropout invariants, {elapsed:.1}s"),
    );
}

#[test]
fn criterion_04_gradient_audits() {
    let start = Instant::now();
    let mut rng = rng_from_seed(4242);
    let mut worst_overall = 0.0f64;
    // Feed-forward regressor, both activations, 8-row probes.
    for activation in [Activation::Relu, Activation::Elu] {
        let spec = MlpSpec::regressor(3, &[8, 4], activation);
        let params = spec.init_params(11);
        let x = Array2::from_shape_fn((8, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
        let y = Array1::from_shape_fn(8, |_| rng.random::<f64>());
        let w = Array1::from_shape_fn(8, |_| rng.random::<f64>() + 0.5);
        let (_, analytic) = regression_loss_grad(&spec, &params, x.view(), y.view(), w.view());
        let err = gradient_check(
            |p| regression_loss(&spec, p, x.view(), y.view(), w.view()),
            &analytic,
            &params,
            1e-5,
        );
        assert!(err < 1e-4, "{activation:?} regressor audit {err}");
        worst_overall = worst_overall.max(err);
    }
    // Logistic log-likelihood.
    {
        let x = Array2::from_shape_fn((8, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
        let y = Array1::from_shape_fn(8, |i| f64::from(i % 3 == 0));
        let w = Array1::ones(8);
        let params = vec![0.2, -0.4, 0.1, 0.05];
        let (_, analytic) = logistic_loss_grad(&params, x.view(), y.view(), w.view(), 1e-6);
        let err = gradient_check(
            |p| logistic_loss_grad(p, x.view(), y.view(), w.view(), 1e-6).0,
            &analytic,
            &params,
            1e-5,
        );
        assert!(err < 1e-4, "logistic audit {err}");
        worst_overall = worst_overall.max(err);
    }
    // Balance block with both MMD penalties active.
    {
        let cfg = ltce_core::balance::BalanceConfig {
            d_rep: 6,
            head_hidden: 4,
            ..Default::default()
        };
        let spec = BlockSpec::new(2, &cfg);
        let params = spec.init_params(5);
        let features = Array2::from_shape_fn((8, 2), |_| rng.random::<f64>() * 2.0 - 1.0);
        let arm = Array1::from_shape_fn(8, |i| u8::from(i % 2 == 0));
        let observed = Array1::from_shape_fn(8, |i| u8::from(i < 5));
        let targets = Array1::from_shape_fn(8, |i| {
            (observed[i] == 1).then(|| rng.random::<f64>())
        });
        let input = StageInput {
            features,
            arm,
            observed,
            targets,
        };
        let (_, analytic) = block_loss(&spec, &params, &input, 0.8, 1.2);
        let err = gradient_check(
            |p| block_loss_value(&spec, p, &input, 0.8, 1.2),
            &analytic,
            &params,
            1e-5,
        );
        assert!(err < 1e-4, "balance block audit {err}");
        worst_overall = worst_overall.max(err);
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "took {elapsed:.1}s, budget 10s");
    pass(
        4,
        "gradient audits",
        format!("max relative error {worst_overall:.2e} < 1e-4, {elapsed:.1}s"),
    );
}

/// Noise-free affine chain with arm-specific coefficients; dropout by the
/// rank rule keeps enough rows to identify every stage map exactly.
fn affine_panel(
    n: usize,
    seed: u64,
    gamma: f64,
) -> (ltce_core::LongTermDataset, Array3<f64>, Array2<f64>) {
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
    let full = ltce_core::LongTermDataset::new(x, a, s, y, r).unwrap();
    let ds = if gamma > 0.0 {
        dgp::apply_missing(&full, gamma, seed ^ 0x5a5a).unwrap()
    } else {
        full
    };
    (ds, s_pot, y_pot)
}

#[test]
fn criterion_05_sequential_imputation_exactness() {
    let (ds, s_pot, y_pot) = affine_panel(800, 13, 0.2);
    let (est, panel) = seqri(&ds, &linear_cfg()).unwrap();
    let mut worst = 0.0f64;
    for i in 0..ds.n() {
        for arm in 0..2usize {
            worst = worst.max((panel.values[arm][[i, 0]] - s_pot[[i, 0, arm]]).abs());
            worst = worst.max((panel.values[arm][[i, 1]] - s_pot[[i, 1, arm]]).abs());
            worst = worst.max((panel.values[arm][[i, 2]] - y_pot[[i, arm]]).abs());
        }
        let tau_i = y_pot[[i, 1]] - y_pot[[i, 0]];
        worst = worst.max((est.cate_hat[i] - tau_i).abs());
    }
    assert!(worst < 1e-8, "worst imputation/CATE error {worst}");
    pass(
        5,
        "sequential imputation exactness",
        format!("max per-unit error {worst:.2e} < 1e-8"),
    );
}

#[test]
fn criterion_06_reduction_lattice() {
    // (a) Fully observed with unit selection scores: the selection-weighted
    // IPW estimator coincides with the naive one.
    let (ds, _, _) = affine_panel(500, 21, 0.0);
    let mut rng = rng_from_seed(3);
    let noisy_y = Array1::from_shape_fn(ds.n(), |i| {
        Some(ds.y()[i].unwrap() + 0.3 * std_normal(&mut rng))
    });
    let ds = ltce_core::LongTermDataset::new(
        ds.x().clone(),
        ds.a().clone(),
        ds.s().clone(),
        noisy_y,
        ds.r().clone(),
    )
    .unwrap();
    let nuis = NuisanceScores::from_oracle(
        Array1::from_elem(ds.n(), 0.5),
        Array2::from_elem((ds.n(), 3), 1.0),
        0.01,
    );
    let cfg = linear_cfg();
    let a = proposed_ipw(&ds, &nuis, &cfg).unwrap();
    let b = naive_ipw(&ds, &nuis, &cfg).unwrap();
    let ipw_gap = (0..ds.n())
        .map(|i| (a.cate_hat[i] - b.cate_hat[i]).abs())
        .fold(0.0f64, f64::max);
    assert!(ipw_gap < 1e-8, "ipw reduction gap {ipw_gap}");

    // (b) Constant weights: the reweighted sequential model equals plain
    // sequential imputation.
    let msm = seqmsm(&ds, &nuis, &cfg).unwrap();
    let (ri, _) = seqri(&ds, &cfg).unwrap();
    let msm_gap = (0..ds.n())
        .map(|i| (msm.cate_hat[i] - ri.cate_hat[i]).abs())
        .fold(0.0f64, f64::max);
    assert!(msm_gap < 1e-8, "seqmsm reduction gap {msm_gap}");

    // (c) Zero penalties: the balance-block loss is the factual MSE.
    let bal_cfg = ltce_core::balance::BalanceConfig {
        d_rep: 6,
        head_hidden: 4,
        ..Default::default()
    };
    let spec = BlockSpec::new(2, &bal_cfg);
    let params = spec.init_params(9);
    let mut rng = rng_from_seed(17);
    let features = Array2::from_shape_fn((10, 2), |_| rng.random::<f64>());
    let arm = Array1::from_shape_fn(10, |i| u8::from(i % 2 == 0));
    let observed = Array1::from_shape_fn(10, |i| u8::from(i < 7));
    let targets =
        Array1::from_shape_fn(10, |i| (observed[i] == 1).then(|| rng.random::<f64>()));
    let input = StageInput {
        features,
        arm,
        observed,
        targets,
    };
    let (loss, _) = block_loss(&spec, &params, &input, 0.0, 0.0);
    let block = ltce_core::balance::BlockParams {
        spec: spec.clone(),
        params: params.clone(),
    };
    let preds = block.predict_factual(&input.features, &input.arm);
    let obs: Vec<usize> = (0..10).filter(|&i| input.observed[i] == 1).collect();
    let mse = obs
        .iter()
        .map(|&i| (preds[i] - input.targets[i].unwrap()).powi(2))
        .sum::<f64>()
        / obs.len() as f64;
    let loss_gap = (loss - mse).abs();
    assert!(loss_gap < 1e-8, "block loss gap {loss_gap}");

    pass(
        6,
        "reduction lattice",
        format!("gaps: ipw {ipw_gap:.2e}, seqmsm {msm_gap:.2e}, block {loss_gap:.2e}, all < 1e-8"),
    );
}

fn run_binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ltce"))
        .args(args)
        .output()
        .expect("running ltce binary")
}

fn write_config(path: &Path, body: &str) {
    std::fs::write(path, body).unwrap();
}

const BENCHMARK_CONFIG: &str = r#"
style = "binary-mix"
n = 2570
p = 17
stages = 3
c2 = 2.0
gamma = 0.15
treatment_intercept = -2.3
trials = 20
master_seed = 20260810
sweep_axis = "gamma"
sweep_values = [0.15]
methods = ["naive-or", "seqmsm", "balancenet"]
cate_draws = 500
max_epochs = 400
lambda1 = 1.0
lambda2 = 1.0
"#;

fn table_means(dir: &Path) -> Vec<(String, f64)> {
    let text = std::fs::read_to_string(dir.join("table_mean.csv")).unwrap();
    text.lines()
        .skip(1)
        .map(|line| {
            let mut parts = line.split(',');
            let method = parts.next().unwrap().to_string();
            let eps_cate: f64 = parts.next().unwrap().parse().unwrap();
            (method, eps_cate)
        })
        .collect()
}

#[test]
fn criterion_07_benchmark_ordering() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bench.toml");
    write_config(&cfg_path, BENCHMARK_CONFIG);
    let out_dir = dir.path().join("out");
    let output = run_binary(&[
        "run",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let means = table_means(&out_dir);
    let get = |m: &str| means.iter().find(|(k, _)| k == m).unwrap().1;
    let (or, msm, bn) = (get("naive-or"), get("seqmsm"), get("balancenet"));
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        bn < or,
        "mean eps_cate: balancenet {bn} not below naive-or {or}"
    );
    assert!(
        msm < or,
        "mean eps_cate: seqmsm {msm} not below naive-or {or}"
    );
    assert!(elapsed < 900.0, "took {elapsed:.0}s, budget 900s");
    pass(
        7,
        "benchmark ordering",
        format!(
            "mean eps_cate: balancenet {bn:.3} < naive-or {or:.3}, seqmsm {msm:.3} < naive-or {or:.3}, {elapsed:.0}s"
        ),
    );
}

#[test]
fn criterion_08_lambda_robustness() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("lambda.toml");
    write_config(
        &cfg_path,
        r#"
style = "binary-mix"
n = 2570
p = 17
stages = 3
c2 = 2.0
gamma = 0.15
treatment_intercept = -2.3
trials = 6
master_seed = 20260810
sweep_axis = "lambda"
sweep_values = [0.2, 1.0, 5.0]
methods = ["balancenet"]
cate_draws = 500
max_epochs = 400
"#,
    );
    let out_dir = dir.path().join("out");
    let output = run_binary(&[
        "run",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    // One row (balancenet), three (eps_cate, eps_ate) column pairs.
    let text = std::fs::read_to_string(out_dir.join("table_mean.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    let cells: Vec<&str> = row.split(',').collect();
    let means: Vec<f64> = [1, 3, 5].iter().map(|&i| cells[i].parse().unwrap()).collect();
    let hi = means.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lo = means.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let center = means.iter().sum::<f64>() / means.len() as f64;
    let spread = (hi - lo) / center;
    assert!(
        spread < 0.20,
        "relative spread of mean eps_cate over lambda sweep is {spread:.3}"
    );
    pass(
        8,
        "lambda robustness",
        format!("mean eps_cate over lambda {{0.2,1,5}}: {means:?}, relative spread {spread:.3} < 0.20"),
    );
}

#[test]
fn criterion_09_metric_and_ttest_oracles() {
    let cate_err = eps_cate(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
    assert!((cate_err - 12.5f64.sqrt()).abs() < 1e-12);

    // Ten paired differences with mean 2.262 and sample sd sqrt(10).
    let b = [0.0f64; 10];
    let mut a = [0.0f64; 10];
    for (i, slot) in a.iter_mut().enumerate() {
        *slot = if i < 5 { 2.262 + 3.0 } else { 2.262 - 3.0 };
    }
    let t = paired_t_test(&a, &b).unwrap();
    assert_eq!(t.df, 9);
    assert!((t.t_statistic - 2.262).abs() < 1e-12);
    assert!((t.p_value - 0.050).abs() <= 1e-3, "p {}", t.p_value);
    pass(
        9,
        "metric and t-test oracles",
        format!(
            "eps_cate((3,4)) = {cate_err:.6} = sqrt(12.5); p(t=2.262, df=9) = {:.4}",
            t.p_value
        ),
    );
}

#[test]
fn criterion_10_byte_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("det.toml");
    write_config(
        &cfg_path,
        r#"
style = "continuous"
n = 400
p = 5
stages = 3
trials = 4
master_seed = 31
sweep_axis = "gamma"
sweep_values = [0.1, 0.3]
methods = ["naive-or", "proposed-ipw", "seqri", "seqmsm", "balancenet"]
cate_draws = 20
max_epochs = 120
"#,
    );
    let mut outputs = Vec::new();
    for (label, jobs) in [("serial-1", "1"), ("serial-2", "1"), ("parallel", "2")] {
        let out_dir = dir.path().join(label);
        let output = run_binary(&[
            "run",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--jobs",
            jobs,
        ]);
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
        outputs.push(std::fs::read(out_dir.join("records.jsonl")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "repeated serial runs differ");
    assert_eq!(outputs[0], outputs[2], "serial and parallel runs differ");
    pass(
        10,
        "byte determinism",
        format!(
            "records.jsonl identical across repeated serial and parallel runs ({} bytes)",
            outputs[0].len()
        ),
    );
}
