//! Weighted logistic regression fit by monotone full-batch gradient ascent.

use super::ModelError;
use crate::util::{logit, sigmoid};
use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn logits(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.dot(&self.weights) + self.bias
    }

    /// Elementwise sigmoid of the linear index, clipped into
    /// `[eps_clip, 1 - eps_clip]`. `eps_clip = 0` reproduces the raw
    /// sigmoid.
    pub fn predict_proba(&self, x: ArrayView2<f64>, eps_clip: f64) -> Array1<f64> {
        self.logits(x)
            .map(|&z| sigmoid(z).clamp(eps_clip, 1.0 - eps_clip))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    /// Ridge strength on the slope coefficients (the bias is unpenalized).
    pub l2: f64,
    /// Stop when the gradient infinity norm falls below this.
    pub tol: f64,
    pub max_epochs: usize,
    /// Probability clip used for the degenerate single-class fallback.
    pub eps_clip: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1e-6,
            tol: 1e-6,
            max_epochs: 20_000,
            eps_clip: 0.01,
        }
    }
}

/// Fit result with convergence diagnostics. `objective_curve` holds the
/// penalized mean log-likelihood after every accepted epoch and is
/// non-decreasing by construction (each step passes an Armijo test).
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub model: LogisticModel,
    /// True when the labels carried a single class and the model collapsed
    /// to an intercept at the clipped probability.
    pub degenerate: bool,
    pub epochs: usize,
    pub grad_inf_norm: f64,
    pub objective_curve: Vec<f64>,
}

/// Penalized weighted mean log-likelihood and its gradient; `params` is
/// `[weights.., bias]`. Exposed so the gradient audit can probe the
/// logistic objective like any other trainable loss.
pub fn logistic_loss_grad(
    params: &[f64],
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    w: ArrayView1<f64>,
    l2: f64,
) -> (f64, Vec<f64>) {
    let p = x.ncols();
    let coef = ArrayView1::from(&params[..p]);
    let bias = params[p];
    let w_total: f64 = w.sum();
    let z = x.dot(&coef) + bias;
    let mut obj = 0.0;
    let mut grad = vec![0.0; p + 1];
    for i in 0..x.nrows() {
        let zi = z[i];
        // y*z - softplus(z), computed stably.
        let softplus = zi.max(0.0) + (-zi.abs()).exp().ln_1p();
        obj += w[i] * (y[i] * zi - softplus);
        let resid = w[i] * (y[i] - sigmoid(zi));
        for j in 0..p {
            grad[j] += resid * x[[i, j]];
        }
        grad[p] += resid;
    }
    obj /= w_total;
    for g in grad.iter_mut() {
        *g /= w_total;
    }
    for j in 0..p {
        obj -= 0.5 * l2 * params[j] * params[j];
        grad[j] -= l2 * params[j];
    }
    (obj, grad)
}

fn objective_only(
    params: &[f64],
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    w: ArrayView1<f64>,
    l2: f64,
) -> f64 {
    let p = x.ncols();
    let coef = ArrayView1::from(&params[..p]);
    let z = x.dot(&coef) + params[p];
    let w_total: f64 = w.sum();
    let mut obj = 0.0;
    for i in 0..x.nrows() {
        let zi = z[i];
        let softplus = zi.max(0.0) + (-zi.abs()).exp().ln_1p();
        obj += w[i] * (y[i] * zi - softplus);
    }
    obj /= w_total;
    for j in 0..p {
        obj -= 0.5 * l2 * params[j] * params[j];
    }
    obj
}

/// Maximizes the weighted log-likelihood by full-batch gradient ascent with
/// Armijo backtracking, so the objective never decreases across epochs.
/// Single-class labels yield an intercept-only model at the clipped class
/// probability, flagged as degenerate.
pub fn fit_logistic(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    sample_weights: Option<ArrayView1<f64>>,
    cfg: &LogisticConfig,
) -> Result<LogisticFit, ModelError> {
    let n = x.nrows();
    if y.len() != n {
        return Err(ModelError::InvalidConfig(format!(
            "{n} rows but {} labels",
            y.len()
        )));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(ModelError::NonBinaryLabels);
    }
    let owned_w;
    let w = match sample_weights {
        Some(w) => {
            if w.len() != n {
                return Err(ModelError::InvalidWeights(format!(
                    "{n} rows but {} weights",
                    w.len()
                )));
            }
            if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(ModelError::InvalidWeights("negative or non-finite".into()));
            }
            if w.sum() <= 0.0 {
                return Err(ModelError::InvalidWeights("all zero".into()));
            }
            w
        }
        None => {
            owned_w = Array1::<f64>::ones(n);
            owned_w.view()
        }
    };
    if n == 0 {
        return Err(ModelError::TooFewRows { need: 1, got: 0 });
    }

    let p = x.ncols();
    let w_total: f64 = w.sum();
    let pos_mass: f64 = (0..n).map(|i| w[i] * y[i]).sum();
    if pos_mass == 0.0 || pos_mass == w_total {
        let prob = (pos_mass / w_total).clamp(cfg.eps_clip, 1.0 - cfg.eps_clip);
        return Ok(LogisticFit {
            model: LogisticModel {
                weights: Array1::zeros(p),
                bias: logit(prob),
            },
            degenerate: true,
            epochs: 0,
            grad_inf_norm: 0.0,
            objective_curve: vec![],
        });
    }

    let mut params = vec![0.0; p + 1];
    let mut step = 1.0f64;
    let mut curve = Vec::new();
    let mut epochs = 0;
    let mut grad_inf = f64::INFINITY;
    for epoch in 0..cfg.max_epochs {
        let (f0, grad) = logistic_loss_grad(&params, x, y, w, cfg.l2);
        if !f0.is_finite() {
            return Err(ModelError::NonFinite { epoch });
        }
        grad_inf = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        epochs = epoch;
        curve.push(f0);
        if grad_inf < cfg.tol {
            break;
        }
        let g_sq: f64 = grad.iter().map(|g| g * g).sum();
        loop {
            let trial: Vec<f64> = params
                .iter()
                .zip(&grad)
                .map(|(v, g)| v + step * g)
                .collect();
            let f1 = objective_only(&trial, x, y, w, cfg.l2);
            if f1 >= f0 + 1e-4 * step * g_sq {
                params = trial;
                step = (step * 2.0).min(1e6);
                break;
            }
            step *= 0.5;
            if step < 1e-18 {
                // No ascent direction left at float precision.
                return Ok(LogisticFit {
                    model: unpack(&params, p),
                    degenerate: false,
                    epochs,
                    grad_inf_norm: grad_inf,
                    objective_curve: curve,
                });
            }
        }
    }
    Ok(LogisticFit {
        model: unpack(&params, p),
        degenerate: false,
        epochs,
        grad_inf_norm: grad_inf,
        objective_curve: curve,
    })
}

fn unpack(params: &[f64], p: usize) -> LogisticModel {
    LogisticModel {
        weights: Array1::from_vec(params[..p].to_vec()),
        bias: params[p],
    }
}
