//! Result tables: methods down the rows, (sweep value, metric) pairs
//! across the columns, one file of trial means and a companion of
//! standard deviations.

use crate::runner::{read_records, JsonlRecord};
use anyhow::{Context, Result};
use ltce_core::metrics::{aggregate, TrialResult};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

fn ordered_methods(records: &[JsonlRecord]) -> Vec<String> {
    let mut seen = Vec::new();
    for r in records {
        if !seen.contains(&r.method) {
            seen.push(r.method.clone());
        }
    }
    seen
}

fn sweep_values(records: &[JsonlRecord]) -> Vec<f64> {
    let mut set = BTreeSet::new();
    for r in records {
        set.insert(r.sweep_value.to_bits());
    }
    let mut values: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Trial results for one (method, sweep value) cell; skips failed trials.
fn cell_trials(records: &[JsonlRecord], method: &str, value: f64) -> Vec<TrialResult> {
    records
        .iter()
        .filter(|r| r.method == method && r.sweep_value == value)
        .filter_map(|r| {
            Some(TrialResult {
                method: r.method.clone(),
                trial: r.trial,
                seed: 0,
                eps_ate: r.eps_ate?,
                eps_cate: r.eps_cate?,
            })
        })
        .collect()
}

/// Companion path for the standard-deviation grid: `foo.csv` ->
/// `foo.std.csv`.
pub fn std_path(mean_path: &Path) -> PathBuf {
    match mean_path.extension().and_then(|e| e.to_str()) {
        Some(ext) => mean_path.with_extension(format!("std.{ext}")),
        None => mean_path.with_extension("std"),
    }
}

/// Writes the mean grid to `out` and the standard-deviation grid to
/// [`std_path`]`(out)`. Cells without any successful trial stay empty.
pub fn emit_table(results_dir: &Path, out: &Path) -> Result<()> {
    let records = read_records(results_dir)?;
    emit_table_from_records(&records, out)
}

pub fn emit_table_from_records(records: &[JsonlRecord], out: &Path) -> Result<()> {
    let methods = ordered_methods(records);
    let values = sweep_values(records);
    let axis = records
        .first()
        .map(|r| r.sweep_axis.clone())
        .unwrap_or_else(|| "sweep".to_string());

    let mut header = vec!["method".to_string()];
    for v in &values {
        header.push(format!("eps_cate@{axis}={v}"));
        header.push(format!("eps_ate@{axis}={v}"));
    }
    let mut mean_rows = vec![header.join(",")];
    let mut std_rows = vec![mean_rows[0].clone()];
    for method in &methods {
        let mut mean_row = vec![method.clone()];
        let mut std_row = vec![method.clone()];
        for &v in &values {
            let trials = cell_trials(records, method, v);
            if trials.is_empty() {
                mean_row.extend(["".to_string(), "".to_string()]);
                std_row.extend(["".to_string(), "".to_string()]);
                continue;
            }
            let agg = aggregate(&trials).expect("non-empty");
            let cate = &agg.eps_cate[method];
            let ate = &agg.eps_ate[method];
            mean_row.push(format!("{}", cate.mean));
            mean_row.push(format!("{}", ate.mean));
            std_row.push(format!("{}", cate.std));
            std_row.push(format!("{}", ate.std));
        }
        mean_rows.push(mean_row.join(","));
        std_rows.push(std_row.join(","));
    }
    std::fs::write(out, mean_rows.join("\n") + "\n")
        .with_context(|| format!("writing {}", out.display()))?;
    std::fs::write(std_path(out), std_rows.join("\n") + "\n")?;
    Ok(())
}
