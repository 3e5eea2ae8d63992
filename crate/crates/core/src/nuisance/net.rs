//! Feed-forward networks over flat parameter vectors, an adaptive-moment
//! full-batch trainer with early stopping, and a finite-difference gradient
//! audit. Keeping parameters flat lets one optimizer and one audit serve
//! every trainable loss in the crate.

use super::ModelError;
use crate::util::{derive_seed, rng_from_seed, shuffled_indices};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Elu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => f64::from(z > 0.0),
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
        }
    }
}

/// Layer widths plus activation; `activate_last` distinguishes encoders
/// (representation output passes through the activation) from regression
/// tails (linear output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub activate_last: bool,
}

impl MlpSpec {
    pub fn regressor(input: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            sizes,
            activation,
            activate_last: false,
        }
    }

    pub fn param_count(&self) -> usize {
        self.sizes
            .windows(2)
            .map(|fan| (fan[0] + 1) * fan[1])
            .sum()
    }

    /// Symmetric uniform fan-in initialization: weights from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero. Deterministic in
    /// the seed.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let mut params = Vec::with_capacity(self.param_count());
        for fan in self.sizes.windows(2) {
            let bound = 1.0 / (fan[0] as f64).sqrt();
            for _ in 0..fan[0] * fan[1] {
                params.push(rng.random_range(-bound..bound));
            }
            params.extend(std::iter::repeat_n(0.0, fan[1]));
        }
        params
    }

    fn layer_offsets(&self) -> Vec<(usize, usize, usize)> {
        // (weight offset, bias offset, next offset) per layer
        let mut offs = Vec::new();
        let mut at = 0;
        for fan in self.sizes.windows(2) {
            let w_at = at;
            let b_at = at + fan[0] * fan[1];
            at = b_at + fan[1];
            offs.push((w_at, b_at, at));
        }
        offs
    }

    /// Forward pass caching pre-activations for the backward pass.
    pub fn forward_cached(&self, params: &[f64], x: ArrayView2<f64>) -> MlpCache {
        debug_assert_eq!(params.len(), self.param_count());
        let mut activations = vec![x.to_owned()];
        let mut preacts = Vec::new();
        let last = self.sizes.len() - 2;
        for (l, (fan, (w_at, b_at, _))) in self
            .sizes
            .windows(2)
            .zip(self.layer_offsets())
            .enumerate()
        {
            let w = ArrayView2::from_shape((fan[0], fan[1]), &params[w_at..b_at]).unwrap();
            let b = ArrayView1::from(&params[b_at..b_at + fan[1]]);
            let mut z = activations.last().unwrap().dot(&w);
            z += &b;
            let activated = l < last || self.activate_last;
            let a = if activated {
                z.map(|&v| self.activation.apply(v))
            } else {
                z.clone()
            };
            preacts.push(z);
            activations.push(a);
        }
        MlpCache {
            activations,
            preacts,
        }
    }

    /// Network output for a batch; shape `n x sizes.last()`.
    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let mut cache = self.forward_cached(params, x);
        cache.activations.pop().expect("at least the input layer")
    }

    /// Backpropagates `d_out = dL/d(output)` through the cached pass,
    /// adding parameter gradients into `grad` (same layout as `params`) and
    /// returning `dL/d(input)`.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        d_out: Array2<f64>,
        grad: &mut [f64],
    ) -> Array2<f64> {
        debug_assert_eq!(grad.len(), self.param_count());
        let offsets = self.layer_offsets();
        let last = self.sizes.len() - 2;
        let mut delta = d_out;
        for l in (0..=last).rev() {
            let fan_in = self.sizes[l];
            let fan_out = self.sizes[l + 1];
            let (w_at, b_at, _) = offsets[l];
            if l < last || self.activate_last {
                let z = &cache.preacts[l];
                delta.zip_mut_with(z, |d, &zv| *d *= self.activation.derivative(zv));
            }
            let a_prev = &cache.activations[l];
            let gw = a_prev.t().dot(&delta);
            for (dst, src) in grad[w_at..b_at].iter_mut().zip(gw.iter()) {
                *dst += src;
            }
            let gb = delta.sum_axis(Axis(0));
            for (dst, src) in grad[b_at..b_at + fan_out].iter_mut().zip(gb.iter()) {
                *dst += src;
            }
            let w = ArrayView2::from_shape((fan_in, fan_out), &params[w_at..b_at]).unwrap();
            delta = delta.dot(&w.t());
        }
        delta
    }
}

pub struct MlpCache {
    pub activations: Vec<Array2<f64>>,
    pub preacts: Vec<Array2<f64>>,
}

/// Weighted mean squared error `sum(w*(pred-y)^2)/sum(w)` and its gradient
/// with respect to the flat parameters. Normalizing by the weight total
/// makes the training trajectory invariant to rescaling all weights.
pub fn regression_loss_grad(
    spec: &MlpSpec,
    params: &[f64],
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    w: ArrayView1<f64>,
) -> (f64, Vec<f64>) {
    let w_total: f64 = w.sum();
    if w_total <= 0.0 {
        // A weightless batch carries no signal: loss and gradient vanish.
        return (0.0, vec![0.0; spec.param_count()]);
    }
    let cache = spec.forward_cached(params, x);
    let preds = cache.activations.last().unwrap();
    let n = x.nrows();
    let mut loss = 0.0;
    let mut d_out = Array2::<f64>::zeros((n, 1));
    for i in 0..n {
        let resid = preds[[i, 0]] - y[i];
        loss += w[i] * resid * resid;
        d_out[[i, 0]] = 2.0 * w[i] * resid / w_total;
    }
    loss /= w_total;
    let mut grad = vec![0.0; spec.param_count()];
    spec.backward(params, &cache, d_out, &mut grad);
    (loss, grad)
}

pub fn regression_loss(
    spec: &MlpSpec,
    params: &[f64],
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    w: ArrayView1<f64>,
) -> f64 {
    let w_total: f64 = w.sum();
    if w_total <= 0.0 {
        return 0.0;
    }
    let preds = spec.forward(params, x);
    let mut loss = 0.0;
    for i in 0..x.nrows() {
        let resid = preds[[i, 0]] - y[i];
        loss += w[i] * resid * resid;
    }
    loss / w_total
}

/// Knobs for fitting regressors and balance blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Candidate rates for manual tuning; the fit uses `learning_rate`.
    pub lr_grid: Vec<f64>,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of rows (the last slice of a seeded shuffle) held out for
    /// early stopping; 0 trains to `max_epochs` on everything.
    pub val_fraction: f64,
    /// Probability clip applied wherever fitted probabilities are inverted.
    pub eps_clip: f64,
    /// Training sample weights are capped here before fitting.
    pub max_weight: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            lr_grid: vec![0.001, 0.005, 0.01],
            max_epochs: 2000,
            patience: 10,
            val_fraction: 0.2,
            eps_clip: 0.01,
            max_weight: 1e6,
            hidden: vec![50, 25],
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.learning_rate <= 0.0 {
            return Err(ModelError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(0.0..0.5).contains(&self.eps_clip) {
            return Err(ModelError::InvalidConfig(
                "eps_clip must lie in [0, 0.5)".into(),
            ));
        }
        if self.patience == 0 {
            return Err(ModelError::InvalidConfig("patience must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(ModelError::InvalidConfig(
                "val_fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamSettings {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl AdamSettings {
    pub fn from_train(cfg: &TrainConfig) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: cfg.max_epochs,
            patience: cfg.patience,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitTrace {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Full-batch adaptive-moment descent. When a validation loss is supplied,
/// keeps the best-validation parameters and stops after `patience` epochs
/// without improvement; otherwise runs to `max_epochs`. Errors out on a
/// non-finite training loss.
pub fn adam_fit(
    init: Vec<f64>,
    mut loss_grad: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    mut val_loss: Option<&mut dyn FnMut(&[f64]) -> f64>,
    settings: &AdamSettings,
) -> Result<(Vec<f64>, FitTrace), ModelError> {
    let dim = init.len();
    let mut params = init;
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut trace = FitTrace::default();
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;

    for epoch in 0..settings.max_epochs {
        let (loss, grad) = loss_grad(&params);
        if !loss.is_finite() {
            return Err(ModelError::NonFinite { epoch });
        }
        trace.train_loss.push(loss);
        let t = (epoch + 1) as f64;
        let bc1 = 1.0 - settings.beta1.powf(t);
        let bc2 = 1.0 - settings.beta2.powf(t);
        for k in 0..dim {
            m[k] = settings.beta1 * m[k] + (1.0 - settings.beta1) * grad[k];
            v[k] = settings.beta2 * v[k] + (1.0 - settings.beta2) * grad[k] * grad[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            params[k] -= settings.learning_rate * m_hat / (v_hat.sqrt() + settings.eps);
        }
        if let Some(vl) = val_loss.as_deref_mut() {
            let value = vl(&params);
            if !value.is_finite() {
                return Err(ModelError::NonFinite { epoch });
            }
            trace.val_loss.push(value);
            if value < best_val {
                best_val = value;
                best.copy_from_slice(&params);
                trace.best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= settings.patience {
                    trace.stopped_early = true;
                    return Ok((best, trace));
                }
            }
        }
    }
    if val_loss.is_some() {
        Ok((best, trace))
    } else {
        Ok((params, trace))
    }
}

/// A fitted feed-forward regressor (input -> hidden layers -> scalar).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardRegressor {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

impl FeedForwardRegressor {
    /// Minimizes the weighted squared error by full-batch adaptive-moment
    /// descent with early stopping on the held-out slice. Deterministic in
    /// `cfg.seed`. Zero-weight rows are dropped before any arithmetic and
    /// weights are normalized by their maximum, so removing a zero-weight
    /// unit or rescaling all weights uniformly leaves the trajectory
    /// bit-identical.
    pub fn fit(
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        sample_weights: ArrayView1<f64>,
        cfg: &TrainConfig,
    ) -> Result<(Self, FitTrace), ModelError> {
        cfg.validate()?;
        if sample_weights.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(ModelError::InvalidWeights("negative or non-finite".into()));
        }
        let active: Vec<usize> = (0..x.nrows()).filter(|&i| sample_weights[i] > 0.0).collect();
        let n = active.len();
        if n < 2 {
            return Err(ModelError::TooFewRows { need: 2, got: n });
        }
        let capped: Vec<f64> = active
            .iter()
            .map(|&i| sample_weights[i].min(cfg.max_weight))
            .collect();
        let w_max = capped.iter().fold(0.0f64, |m, &v| m.max(v));
        let w: Vec<f64> = capped.iter().map(|&v| v / w_max).collect();
        let spec = MlpSpec::regressor(x.ncols(), &cfg.hidden, cfg.activation);
        let init = spec.init_params(derive_seed(cfg.seed, &[0]));

        let n_val = (cfg.val_fraction * n as f64).floor() as usize;
        let (train_idx, val_idx) = if n_val == 0 || n - n_val < 2 {
            ((0..n).collect::<Vec<_>>(), Vec::new())
        } else {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, &[1]));
            let order = shuffled_indices(n, &mut rng);
            let split = n - n_val;
            (order[..split].to_vec(), order[split..].to_vec())
        };
        let take = |idx: &[usize]| -> (Array2<f64>, Array1<f64>, Array1<f64>) {
            let xs = Array2::from_shape_fn((idx.len(), x.ncols()), |(i, j)| x[[active[idx[i]], j]]);
            let ys = Array1::from_iter(idx.iter().map(|&i| y[active[i]]));
            let ws = Array1::from_iter(idx.iter().map(|&i| w[i]));
            (xs, ys, ws)
        };
        let (xt, yt, wt) = take(&train_idx);
        let settings = AdamSettings::from_train(cfg);
        let (params, trace) = if val_idx.is_empty() {
            adam_fit(
                init,
                |p| regression_loss_grad(&spec, p, xt.view(), yt.view(), wt.view()),
                None,
                &settings,
            )?
        } else {
            let (xv, yv, wv) = take(&val_idx);
            let use_val = wv.sum() > 0.0;
            let mut vl = |p: &[f64]| regression_loss(&spec, p, xv.view(), yv.view(), wv.view());
            adam_fit(
                init,
                |p| regression_loss_grad(&spec, p, xt.view(), yt.view(), wt.view()),
                if use_val {
                    Some(&mut vl as &mut dyn FnMut(&[f64]) -> f64)
                } else {
                    None
                },
                &settings,
            )?
        };
        Ok((Self { spec, params }, trace))
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let out = self.spec.forward(&self.params, x);
        out.column(0).to_owned()
    }

    /// Finite-difference audit of the training gradient on a probe batch.
    pub fn gradient_check(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        w: ArrayView1<f64>,
        h: f64,
    ) -> f64 {
        let (_, analytic) =
            regression_loss_grad(&self.spec, &self.params, x, y, w);
        gradient_check(
            |p| regression_loss(&self.spec, p, x, y, w),
            &analytic,
            &self.params,
            h,
        )
    }
}

/// Max over parameters of `|g_analytic - g_fd| / max(1, |g_fd|)` where
/// `g_fd` is the central finite difference of `loss` with step `h`.
pub fn gradient_check(
    loss: impl Fn(&[f64]) -> f64,
    analytic: &[f64],
    at: &[f64],
    h: f64,
) -> f64 {
    let mut probe = at.to_vec();
    let mut worst = 0.0f64;
    for k in 0..at.len() {
        let orig = probe[k];
        probe[k] = orig + h;
        let up = loss(&probe);
        probe[k] = orig - h;
        let down = loss(&probe);
        probe[k] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (analytic[k] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(rel);
    }
    worst
}
