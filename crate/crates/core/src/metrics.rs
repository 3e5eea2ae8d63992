//! Evaluation metrics, trial aggregation, and the paired t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
}

/// Absolute error of the estimated average effect:
/// `|mean(cate_hat) - mean(po_diff)|`, with `po_diff` the realized per-unit
/// potential-outcome differences `Y(1) - Y(0)`.
pub fn eps_ate(cate_hat: &[f64], po_diff: &[f64]) -> Result<f64, MetricError> {
    if cate_hat.len() != po_diff.len() {
        return Err(MetricError::LengthMismatch(cate_hat.len(), po_diff.len()));
    }
    if cate_hat.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok((crate::util::mean(cate_hat) - crate::util::mean(po_diff)).abs())
}

/// Root mean squared error of the estimated conditional effects against the
/// true conditional means.
pub fn eps_cate(cate_hat: &[f64], tau_x_true: &[f64]) -> Result<f64, MetricError> {
    if cate_hat.len() != tau_x_true.len() {
        return Err(MetricError::LengthMismatch(cate_hat.len(), tau_x_true.len()));
    }
    if cate_hat.is_empty() {
        return Err(MetricError::Empty);
    }
    let mse = cate_hat
        .iter()
        .zip(tau_x_true)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / cate_hat.len() as f64;
    Ok(mse.sqrt())
}

/// One estimator's metrics on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub method: String,
    pub trial: usize,
    pub seed: u64,
    pub eps_ate: f64,
    pub eps_cate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

/// Per-method means and sample standard deviations (n-1 denominator) of
/// both metrics across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub eps_ate: BTreeMap<String, MetricSummary>,
    pub eps_cate: BTreeMap<String, MetricSummary>,
}

pub fn aggregate(trials: &[TrialResult]) -> Result<AggregateResult, MetricError> {
    if trials.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut ate: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut cate: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for t in trials {
        ate.entry(t.method.clone()).or_default().push(t.eps_ate);
        cate.entry(t.method.clone()).or_default().push(t.eps_cate);
    }
    let summarize = |m: BTreeMap<String, Vec<f64>>| {
        m.into_iter()
            .map(|(k, v)| {
                (
                    k,
                    MetricSummary {
                        mean: crate::util::mean(&v),
                        std: crate::util::sample_std(&v),
                        trials: v.len(),
                    },
                )
            })
            .collect()
    };
    Ok(AggregateResult {
        eps_ate: summarize(ate),
        eps_cate: summarize(cate),
    })
}

/// Outcome of a two-sided paired t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t_statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Set when the per-trial differences had zero variance, where the
    /// statistic is not defined and the p-value is pinned at 0 or 1.
    pub degenerate: bool,
}

/// Two-sided paired t-test on per-trial metric differences. The series must
/// be aligned by trial (same seeds in the same order).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(MetricError::Empty);
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = crate::util::mean(&diffs);
    let sd = crate::util::sample_std(&diffs);
    let df = n - 1;
    if sd == 0.0 {
        // Identical series: p = 1. Constant nonzero shift: p -> 0.
        return Ok(PairedTTest {
            t_statistic: if mean == 0.0 { 0.0 } else { f64::INFINITY * mean.signum() },
            df,
            p_value: if mean == 0.0 { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let p = 2.0 * dist.cdf(-t.abs());
    Ok(PairedTTest {
        t_statistic: t,
        df,
        p_value: p.clamp(0.0, 1.0),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eps_ate_exact_estimates_score_zero() {
        let diffs = [1.0, 2.0, 3.0];
        assert_eq!(eps_ate(&diffs, &diffs).unwrap(), 0.0);
    }

    #[test]
    fn eps_ate_is_symmetric_in_sign() {
        let truth = [1.0, 1.0];
        let high: Vec<f64> = truth.iter().map(|v| v + 2.0).collect();
        let low: Vec<f64> = truth.iter().map(|v| v - 2.0).collect();
        assert_eq!(eps_ate(&high, &truth).unwrap(), 2.0);
        assert_eq!(eps_ate(&low, &truth).unwrap(), 2.0);
    }

    #[test]
    fn eps_ate_lets_unit_errors_cancel() {
        let truth = [0.0, 0.0];
        let est = [3.0, -3.0];
        assert_eq!(eps_ate(&est, &truth).unwrap(), 0.0);
    }

    #[test]
    fn eps_cate_known_values() {
        let truth = [0.0, 0.0];
        assert_eq!(eps_cate(&truth, &truth).unwrap(), 0.0);
        let off_by_c = [2.5, 2.5];
        assert!((eps_cate(&off_by_c, &truth).unwrap() - 2.5).abs() < 1e-15);
        let est = [3.0, 4.0];
        assert!((eps_cate(&est, &truth).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn eps_cate_dominates_absolute_mean_error() {
        // Jensen: rmse >= |mean error|.
        let truth = [0.3, -0.2, 1.0, 0.5];
        let est = [0.1, 0.4, 1.2, 0.0];
        let rmse = eps_cate(&est, &truth).unwrap();
        let abs_mean = eps_ate(&est, &truth).unwrap();
        assert!(rmse >= abs_mean);
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let truth = [1.0, 2.0, 3.0];
        let est = [1.5, 1.0, 3.5];
        let perm_truth = [3.0, 1.0, 2.0];
        let perm_est = [3.5, 1.5, 1.0];
        assert_eq!(
            eps_cate(&est, &truth).unwrap(),
            eps_cate(&perm_est, &perm_truth).unwrap()
        );
        assert_eq!(
            eps_ate(&est, &truth).unwrap(),
            eps_ate(&perm_est, &perm_truth).unwrap()
        );
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            eps_cate(&[1.0], &[1.0, 2.0]),
            Err(MetricError::LengthMismatch(1, 2))
        ));
    }

    fn trial(method: &str, idx: usize, ate: f64, cate: f64) -> TrialResult {
        TrialResult {
            method: method.to_string(),
            trial: idx,
            seed: idx as u64,
            eps_ate: ate,
            eps_cate: cate,
        }
    }

    #[test]
    fn aggregate_two_values() {
        let trials = vec![trial("m", 0, 1.0, 1.0), trial("m", 1, 3.0, 1.0)];
        let agg = aggregate(&trials).unwrap();
        let ate = &agg.eps_ate["m"];
        assert_eq!(ate.mean, 2.0);
        assert!((ate.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(agg.eps_cate["m"].std, 0.0);
    }

    #[test]
    fn aggregate_rejects_empty() {
        assert!(matches!(aggregate(&[]), Err(MetricError::Empty)));
    }

    #[test]
    fn t_test_identical_series_has_p_one() {
        let xs = [0.4, 0.6, 0.8, 1.0];
        let out = paired_t_test(&xs, &xs).unwrap();
        assert_eq!(out.p_value, 1.0);
        assert!(out.degenerate);
    }

    #[test]
    fn t_test_constant_shift_is_degenerate_zero() {
        let a = [1.0, 2.0, 3.0];
        let b = [0.0, 1.0, 2.0];
        let out = paired_t_test(&a, &b).unwrap();
        assert_eq!(out.p_value, 0.0);
        assert!(out.degenerate);
    }

    #[test]
    fn t_test_matches_table_value() {
        // Ten differences with mean 2.262 and sample sd sqrt(10) give
        // t = 2.262 at df = 9, the two-sided 5% critical point.
        let b = [0.0f64; 10];
        let mut a = [0.0f64; 10];
        for (i, slot) in a.iter_mut().enumerate() {
            *slot = if i < 5 { 2.262 + 3.0 } else { 2.262 - 3.0 };
        }
        let out = paired_t_test(&a, &b).unwrap();
        assert!((out.t_statistic - 2.262).abs() < 1e-12);
        assert_eq!(out.df, 9);
        assert!((out.p_value - 0.050).abs() < 1e-3, "p {}", out.p_value);
    }
}
