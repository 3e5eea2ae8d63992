//! Closed-form weighted least squares behind the regressor interface.
//!
//! The plug-in exists so that estimator identities can be checked at 1e-8
//! tolerances that a trained network cannot reach. Rank-deficient designs
//! (which arise when fitted values of earlier stages re-enter as features)
//! are handled by an SVD pseudo-inverse, so predictions are the orthogonal
//! projection regardless of which coefficient representative is returned.

use super::ModelError;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Coefficients for `[1, x_1, .., x_d]`.
    pub coef: Vec<f64>,
}

impl LinearModel {
    /// Minimizes `sum(w * (y - b0 - x.b)^2)` exactly. Weights must be
    /// nonnegative with positive total.
    pub fn fit(
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        w: ArrayView1<f64>,
    ) -> Result<Self, ModelError> {
        let n = x.nrows();
        let d = x.ncols() + 1;
        if n == 0 {
            return Err(ModelError::TooFewRows { need: 1, got: 0 });
        }
        if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(ModelError::InvalidWeights("negative or non-finite".into()));
        }
        if w.sum() <= 0.0 {
            return Err(ModelError::InvalidWeights("all zero".into()));
        }
        let mut design = DMatrix::<f64>::zeros(n, d);
        let mut target = DVector::<f64>::zeros(n);
        for i in 0..n {
            let sw = w[i].sqrt();
            design[(i, 0)] = sw;
            for j in 0..x.ncols() {
                design[(i, j + 1)] = sw * x[[i, j]];
            }
            target[i] = sw * y[i];
        }
        let svd = design.svd(true, true);
        let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
        let tol = smax * (n.max(d) as f64) * f64::EPSILON * 16.0;
        let coef = svd
            .solve(&target, tol)
            .map_err(|e| ModelError::Solve(e.to_string()))?;
        Ok(Self {
            coef: coef.iter().copied().collect(),
        })
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        Array1::from_iter((0..x.nrows()).map(|i| {
            self.coef[0]
                + (0..x.ncols())
                    .map(|j| self.coef[j + 1] * x[[i, j]])
                    .sum::<f64>()
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from_seed;
    use ndarray::{arr1, Array2};
    use rand::Rng;

    #[test]
    fn exact_on_noise_free_affine_data() {
        let mut rng = rng_from_seed(1);
        let x = Array2::from_shape_fn((50, 3), |_| rng.random::<f64>());
        let y = Array1::from_shape_fn(50, |i| 1.5 - 2.0 * x[[i, 0]] + 0.25 * x[[i, 2]]);
        let m = LinearModel::fit(x.view(), y.view(), Array1::ones(50).view()).unwrap();
        let preds = m.predict(x.view());
        for i in 0..50 {
            assert!((preds[i] - y[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn collinear_columns_still_project_exactly() {
        // Second column is an exact affine function of the first; the fit
        // must still reproduce any target in the span.
        let mut rng = rng_from_seed(2);
        let base = Array1::from_shape_fn(40, |_| rng.random::<f64>());
        let x = Array2::from_shape_fn((40, 2), |(i, j)| {
            if j == 0 {
                base[i]
            } else {
                3.0 * base[i] - 1.0
            }
        });
        let y = base.map(|v| 2.0 * v + 5.0);
        let m = LinearModel::fit(x.view(), y.view(), Array1::ones(40).view()).unwrap();
        let preds = m.predict(x.view());
        for i in 0..40 {
            assert!((preds[i] - y[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn weights_shift_the_fit() {
        let x = Array2::from_shape_vec((4, 1), vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let y = arr1(&[0.0, 10.0, 1.0, 1.0]);
        // All weight on rows 0, 2, 3: intercept 0, slope 1.
        let w = arr1(&[1.0, 0.0, 1.0, 1.0]);
        let m = LinearModel::fit(x.view(), y.view(), w.view()).unwrap();
        assert!((m.coef[0]).abs() < 1e-10);
        assert!((m.coef[1] - 1.0).abs() < 1e-10);
    }
}
