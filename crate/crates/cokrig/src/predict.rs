//! Prediction of the most expensive process at new inputs.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{CokrigError, Result};
use crate::estimate::FittedModel;

/// Predictive mean and variance at one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub var: f64,
}

impl Prediction {
    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }
}

/// Plug-in prediction at x: mean h'(x)^T beta + w(x)^T (z - H beta) and
/// variance s2(x) - w(x)^T t(x), both through the per-level recursions. The
/// mean never touches the level variances; the variance is clamped at zero
/// against roundoff.
pub fn predict_one(model: &FittedModel, x: &[f64]) -> Prediction {
    let st = &model.structures;
    let w = st.weights(x);
    let mean = st.h_prime(x).dot(&model.beta_full) + w.dot(&model.residual);
    let prior = st.prior_variance(x);
    let raw = prior - w.dot(&st.t_vector(x));
    if raw < -1e-10 * prior.max(1e-300) {
        log::warn!(
            "predictive variance {raw:.3e} fell below zero beyond roundoff at {x:?}; clamping"
        );
    }
    Prediction {
        mean,
        var: raw.max(0.0),
    }
}

/// Batch prediction; points are processed in parallel and returned in input
/// order.
pub fn predict(model: &FittedModel, xs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
    let dim = model.dim();
    for (i, x) in xs.iter().enumerate() {
        if x.len() != dim {
            return Err(CokrigError::DimensionMismatch {
                context: format!("query point {i}"),
                expected: dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CokrigError::invalid(format!(
                "query point {i} has a non-finite coordinate"
            )));
        }
    }
    Ok(xs.par_iter().map(|x| predict_one(model, x)).collect())
}

/// Two-level prediction with the level 1 coefficients integrated out
/// against their conditional law, at explicitly supplied scale and trend
/// coefficients and level variances.
///
/// `beta1_mean` and `beta1_cov_over_sigma1` describe the Gaussian law of the
/// level 1 trend coefficients (covariance expressed as a multiple of
/// sigma1^2); `scale_coeffs` and `beta2` are the level 2 regression
/// coefficients. The mean augments the plug-in formula with the level 1
/// posterior mean; the variance adds the propagated level 1 coefficient
/// uncertainty.
#[allow(clippy::too_many_arguments)]
pub fn predict_2level_beta1_uncertain(
    model: &FittedModel,
    beta1_mean: &DVector<f64>,
    beta1_cov_over_sigma1: &nalgebra::DMatrix<f64>,
    scale_coeffs: &DVector<f64>,
    beta2: &DVector<f64>,
    sigma1_sq: f64,
    sigma2_sq: f64,
    x: &[f64],
) -> Result<Prediction> {
    if model.s() != 2 {
        return Err(CokrigError::InvalidParameter {
            name: "model".into(),
            reason: format!("this prediction is defined for 2 levels, the model has {}", model.s()),
        });
    }
    let st = &model.structures;
    let d = st.designs();
    let scale_basis = &st.scales()[0].basis;
    if scale_coeffs.len() != scale_basis.len() {
        return Err(CokrigError::DimensionMismatch {
            context: "scale coefficients".into(),
            expected: scale_basis.len(),
            got: scale_coeffs.len(),
        });
    }
    let p1 = st.level(0).trend.len();
    let p2 = st.level(1).trend.len();
    if beta1_mean.len() != p1 || beta2.len() != p2 {
        return Err(CokrigError::DimensionMismatch {
            context: "trend coefficients".into(),
            expected: p1 + p2,
            got: beta1_mean.len() + beta2.len(),
        });
    }

    let pts1 = d.levels[0].points();
    let pts2 = d.levels[1].points();
    let (n1, n2) = (d.n(0), d.n(1));
    let rho_x = scale_basis.eval(x).dot(scale_coeffs);
    let rho_d2 = scale_basis.matrix(pts2) * scale_coeffs;

    // per-level correlation solves
    let r1x = st.level(0).kernel.cross_vector(x, pts1);
    let r2x = st.level(1).kernel.cross_vector(x, pts2);
    let a1 = st.level(0).factored.solve(&r1x);
    let a2 = st.level(1).factored.solve(&r2x);

    // weight vector at the supplied scale coefficients
    let mut w = DVector::zeros(n1 + n2);
    for i in 0..n1 {
        w[i] = rho_x * a1[i];
    }
    for i in 0..n2 {
        w[n1 - n2 + i] -= rho_d2[i] * a2[i];
        w[n1 + i] = a2[i];
    }

    // trend features and the joint trend matrix at those coefficients
    let f1x = st.level(0).trend.eval(x);
    let f2x = st.level(1).trend.eval(x);
    let f1_d1 = st.level(0).trend.matrix(pts1);
    let f1_d2 = st.level(0).trend.matrix(pts2);
    let f2_d2 = st.level(1).trend.matrix(pts2);
    let mut h = nalgebra::DMatrix::zeros(n1 + n2, p1 + p2);
    for r in 0..n1 {
        for c in 0..p1 {
            h[(r, c)] = f1_d1[(r, c)];
        }
    }
    for r in 0..n2 {
        for c in 0..p1 {
            h[(n1 + r, c)] = rho_d2[r] * f1_d2[(r, c)];
        }
        for c in 0..p2 {
            h[(n1 + r, p1 + c)] = f2_d2[(r, c)];
        }
    }
    let mut beta = DVector::zeros(p1 + p2);
    for i in 0..p1 {
        beta[i] = beta1_mean[i];
    }
    for i in 0..p2 {
        beta[p1 + i] = beta2[i];
    }
    let mut hx = DVector::zeros(p1 + p2);
    for i in 0..p1 {
        hx[i] = rho_x * f1x[i];
    }
    for i in 0..p2 {
        hx[p1 + i] = f2x[i];
    }

    let mean = hx.dot(&beta) + w.dot(&model.z_stacked) - w.dot(&(&h * &beta));

    // plug-in variance at the supplied variances, plus the level 1
    // coefficient uncertainty propagated through k1 = rho(x) k1_tilde
    let e1 = r1x.dot(&a1);
    let e2 = r2x.dot(&a2);
    let k1_tilde = &f1x - f1_d1.transpose() * &a1;
    let q1 = (k1_tilde.transpose() * beta1_cov_over_sigma1 * &k1_tilde)[(0, 0)];
    let var = rho_x * rho_x * sigma1_sq * (1.0 - e1 + q1) + sigma2_sq * (1.0 - e2);

    Ok(Prediction {
        mean,
        var: var.max(0.0),
    })
}
