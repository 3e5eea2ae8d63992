//! Monte Carlo experiment runner: sweep values by trials, one JSONL record
//! per estimator per trial, plus a manifest that pins every derived seed.

use crate::config::{CovariateSource, ExperimentConfig, SweepAxis};
use anyhow::{anyhow, Context, Result};
use ltce_core::balance;
use ltce_core::dgp::{self, Simulated};
use ltce_core::estimators::{estimate, EffectEstimate};
use ltce_core::metrics::{eps_ate, eps_cate};
use ltce_core::util::derive_seed;
use ltce_core::{Method, NuisanceScores};
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// One line of `records.jsonl`. Timing never enters these records so
/// repeated runs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonlRecord {
    pub sweep_axis: String,
    pub sweep_value: f64,
    pub trial: usize,
    pub method: String,
    pub tau_hat: Option<f64>,
    pub eps_ate: Option<f64>,
    pub eps_cate: Option<f64>,
    pub diagnostics: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialSeed {
    pub sweep_value: f64,
    pub trial: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    /// Resolution of generator ambiguities, recorded for reproduction.
    pub notes: BTreeMap<String, String>,
    pub trial_seeds: Vec<TrialSeed>,
    pub wall_clock_secs_per_method: BTreeMap<String, f64>,
}

pub fn generator_notes() -> BTreeMap<String, String> {
    BTreeMap::from([
        (
            "gaussian_scale_parameter".to_string(),
            "second Gaussian parameter interpreted as a standard deviation".to_string(),
        ),
        (
            "trial_resampling".to_string(),
            "coefficient draws, outcomes, and dropout are all resampled per trial".to_string(),
        ),
        (
            "missing_count_rounding".to_string(),
            "rank-rule removal counts use floor(gamma*(1-gamma)^(t-1)*n), ties by unit index"
                .to_string(),
        ),
    ])
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub jobs: usize,
    pub dump_nuisance: bool,
    pub dump_model: bool,
}

pub struct RunOutcome {
    pub records: Vec<JsonlRecord>,
    pub manifest: RunManifest,
}

struct TrialJob {
    sweep_idx: usize,
    sweep_value: f64,
    trial: usize,
    seed: u64,
}

struct TrialOutput {
    records: Vec<JsonlRecord>,
    timings: Vec<(String, f64)>,
    nuisance_dump: Option<String>,
    model_dump: Option<String>,
}

/// Covariates (and optional treatments) loaded once per run.
enum Covariates {
    Synthetic,
    Fixed { x: Array2<f64>, a: Option<Array1<u8>> },
}

fn load_covariate_csv(path: &str) -> Result<(Array2<f64>, Option<Array1<u8>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("reading covariates {path}"))?;
    let headers = reader.headers()?.clone();
    let a_col = headers.iter().position(|h| h == "a");
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut arms: Vec<u8> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let mut row = Vec::with_capacity(headers.len());
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| anyhow!("covariate row {}: {e}", rows.len() + 2))?;
            if Some(j) == a_col {
                arms.push(if v == 1.0 { 1 } else { 0 });
            } else {
                row.push(v);
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    let x = Array2::from_shape_fn((n, p), |(i, j)| rows[i][j]);
    let a = a_col.map(|_| Array1::from_vec(arms));
    Ok((x, a))
}

fn run_trial(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    methods: &[Method],
    covariates: &Covariates,
    job: &TrialJob,
    opts: &RunOptions,
) -> TrialOutput {
    let mut records = Vec::with_capacity(methods.len());
    let mut timings = Vec::with_capacity(methods.len());
    let diag_base = |extra: serde_json::Value| {
        serde_json::json!({ "seed": job.seed, "detail": extra })
    };
    let fail_all = |message: String| -> TrialOutput {
        let records = methods
            .iter()
            .map(|m| JsonlRecord {
                sweep_axis: axis.tag().to_string(),
                sweep_value: job.sweep_value,
                trial: job.trial,
                method: m.tag().to_string(),
                tau_hat: None,
                eps_ate: None,
                eps_cate: None,
                diagnostics: diag_base(serde_json::json!({ "error": message })),
            })
            .collect();
        TrialOutput {
            records,
            timings: Vec::new(),
            nuisance_dump: None,
            model_dump: None,
        }
    };

    let dgp_cfg = match cfg.dgp_config(axis, job.sweep_value, job.seed) {
        Ok(c) => c,
        Err(e) => return fail_all(e.to_string()),
    };
    let sim: Simulated = match covariates {
        Covariates::Synthetic => match dgp::simulate(&dgp_cfg) {
            Ok(s) => s,
            Err(e) => return fail_all(e.to_string()),
        },
        Covariates::Fixed { x, a } => {
            let mut c = dgp_cfg.clone();
            c.n = x.nrows();
            c.p = x.ncols();
            match dgp::simulate_with_covariates(&c, x.clone(), a.clone()) {
                Ok(s) => s,
                Err(e) => return fail_all(e.to_string()),
            }
        }
    };
    let est_cfg = match cfg.estimator_config(axis, job.sweep_value, job.seed) {
        Ok(c) => c,
        Err(e) => return fail_all(e.to_string()),
    };
    let nuis = if cfg.use_oracle_nuisances() {
        match &sim.oracle_selection {
            Some(r) => NuisanceScores::from_oracle(
                sim.oracle_propensity.clone(),
                r.clone(),
                cfg.eps_clip,
            ),
            None => return fail_all("oracle nuisances unavailable for this mechanism".into()),
        }
    } else {
        match NuisanceScores::fit(&sim.dataset, &cfg.logistic_config()) {
            Ok(n) => n,
            Err(e) => return fail_all(format!("nuisance fit failed: {e}")),
        }
    };

    let truth_diff: Vec<f64> = sim.truth.po_diff().to_vec();
    let truth_tau_x: Vec<f64> = sim.truth.tau_x().to_vec();
    let mut model_dump = None;

    for &method in methods {
        let start = Instant::now();
        let result: Result<EffectEstimate, _> =
            if method == Method::BalanceNet && opts.dump_model {
                balance::run_balancenet_blocks(&sim.dataset, &est_cfg).map(|(est, blocks)| {
                    model_dump =
                        Some(serde_json::to_string_pretty(&blocks).expect("serializable blocks"));
                    est
                })
            } else {
                estimate(method, &sim.dataset, &nuis, &est_cfg)
            };
        let elapsed = start.elapsed().as_secs_f64();
        timings.push((method.tag().to_string(), elapsed));
        let record = match result {
            Ok(est) => {
                let cate: Vec<f64> = est.cate_hat.to_vec();
                let ate_err = eps_ate(&cate, &truth_diff).expect("aligned lengths");
                let cate_err = eps_cate(&cate, &truth_tau_x).expect("aligned lengths");
                JsonlRecord {
                    sweep_axis: axis.tag().to_string(),
                    sweep_value: job.sweep_value,
                    trial: job.trial,
                    method: method.tag().to_string(),
                    tau_hat: Some(est.tau_hat),
                    eps_ate: Some(ate_err),
                    eps_cate: Some(cate_err),
                    diagnostics: diag_base(serde_json::json!({
                        "rows_used": est.diagnostics.rows_used,
                        "max_weight": est.diagnostics.max_weight,
                        "flags": est.diagnostics.flags,
                    })),
                }
            }
            Err(e) => JsonlRecord {
                sweep_axis: axis.tag().to_string(),
                sweep_value: job.sweep_value,
                trial: job.trial,
                method: method.tag().to_string(),
                tau_hat: None,
                eps_ate: None,
                eps_cate: None,
                diagnostics: diag_base(serde_json::json!({ "error": e.to_string() })),
            },
        };
        records.push(record);
    }

    let nuisance_dump = opts.dump_nuisance.then(|| {
        let t = sim.dataset.stages();
        let mut out = String::from("e1");
        for u in 1..=t {
            out.push_str(&format!(",r{u}"));
        }
        out.push('\n');
        for i in 0..sim.dataset.n() {
            out.push_str(&format!("{}", nuis.e1[i]));
            for u in 0..t {
                match nuis.r[[i, u]] {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    });

    TrialOutput {
        records,
        timings,
        nuisance_dump,
        model_dump,
    }
}

/// Runs the full sweep-by-trial grid and writes `records.jsonl`,
/// `manifest.json`, and the mean/std table CSVs into `out_dir`. Trials run
/// on a bounded worker pool; records are ordered by (sweep value, trial,
/// roster position) regardless of scheduling, so serial and parallel runs
/// produce identical files.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let axis = cfg.sweep_axis()?;
    let methods = cfg.method_list()?;
    let covariates = match cfg.covariate_source()? {
        CovariateSource::Synthetic => Covariates::Synthetic,
        CovariateSource::Csv(path) => {
            let (x, a) = load_covariate_csv(&path)?;
            Covariates::Fixed { x, a }
        }
    };
    std::fs::create_dir_all(out_dir)?;

    let jobs: Vec<TrialJob> = cfg
        .sweep_values
        .iter()
        .enumerate()
        .flat_map(|(sweep_idx, &sweep_value)| {
            (0..cfg.trials).map(move |trial| TrialJob {
                sweep_idx,
                sweep_value,
                trial,
                seed: derive_seed(cfg.master_seed, &[sweep_idx as u64, trial as u64]),
            })
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(if opts.jobs == 0 { 0 } else { opts.jobs })
        .build()
        .context("building worker pool")?;
    let outputs: Vec<TrialOutput> = pool.install(|| {
        jobs.par_iter()
            .map(|job| run_trial(cfg, axis, &methods, &covariates, job, opts))
            .collect()
    });

    let mut records = Vec::new();
    let mut wall: BTreeMap<String, f64> = BTreeMap::new();
    for (job, output) in jobs.iter().zip(outputs) {
        for (m, secs) in &output.timings {
            *wall.entry(m.clone()).or_insert(0.0) += secs;
        }
        if let Some(csv) = output.nuisance_dump {
            let dir = out_dir.join("nuisance");
            std::fs::create_dir_all(&dir)?;
            std::fs::write(
                dir.join(format!("sweep{}_trial{}.csv", job.sweep_idx, job.trial)),
                csv,
            )?;
        }
        if let Some(json) = output.model_dump {
            let dir = out_dir.join("model");
            std::fs::create_dir_all(&dir)?;
            std::fs::write(
                dir.join(format!("sweep{}_trial{}.json", job.sweep_idx, job.trial)),
                json,
            )?;
        }
        records.extend(output.records);
    }

    let mut jsonl = std::fs::File::create(out_dir.join("records.jsonl"))?;
    for record in &records {
        writeln!(jsonl, "{}", serde_json::to_string(record)?)?;
    }
    jsonl.flush()?;

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        notes: generator_notes(),
        trial_seeds: jobs
            .iter()
            .map(|j| TrialSeed {
                sweep_value: j.sweep_value,
                trial: j.trial,
                seed: j.seed,
            })
            .collect(),
        wall_clock_secs_per_method: wall,
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    crate::table::emit_table(out_dir, &out_dir.join("table_mean.csv"))?;
    Ok(RunOutcome { records, manifest })
}

/// Reads `records.jsonl` back from a results directory.
pub fn read_records(dir: &Path) -> Result<Vec<JsonlRecord>> {
    let path = dir.join("records.jsonl");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).context("parsing JSONL record"))
        .collect()
}
