//! Accuracy metrics and leave-one-out cross validation.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::design::{points_match, DesignSet};
use crate::error::{CokrigError, Result};
use crate::estimate::{fit, FittedModel};
use crate::predict::predict_one;

/// Summary metrics of a prediction set against known truth.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub rmse: f64,
    /// None when the true values have zero variance.
    pub q2: Option<f64>,
    pub max_abs_error: f64,
    pub avg_pred_std: f64,
    pub median_pred_std: f64,
    pub max_pred_std: f64,
    pub n_test: usize,
}

/// Q2 denominator convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Q2Mode {
    /// 1 - SSE / sum (truth - mean(truth))^2.
    Standard,
    /// 1 - SSE / sum (prediction - mean(truth))^2; an older reporting
    /// convention kept for comparability.
    PredictedCentered,
}

impl Q2Mode {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        match config.metrics.q2.as_str() {
            "standard" => Ok(Q2Mode::Standard),
            "predicted" | "predicted-centered" => Ok(Q2Mode::PredictedCentered),
            other => Err(CokrigError::InvalidParameter {
                name: "metrics.q2".into(),
                reason: format!("unknown convention {other:?}; use standard or predicted"),
            }),
        }
    }
}

/// Computes RMSE, Q2 and predictive spread summaries. `stds` may be empty
/// when no predictive spread is available; the spread summaries are then
/// zero.
pub fn compute_metrics(
    truth: &[f64],
    means: &[f64],
    stds: &[f64],
    q2_mode: Q2Mode,
) -> Result<MetricsReport> {
    let n = truth.len();
    if n == 0 {
        return Err(CokrigError::invalid("metrics need at least one test point"));
    }
    if means.len() != n || (!stds.is_empty() && stds.len() != n) {
        return Err(CokrigError::DimensionMismatch {
            context: "metric inputs".into(),
            expected: n,
            got: means.len(),
        });
    }
    let mut sse = 0.0;
    let mut max_abs = 0.0f64;
    for i in 0..n {
        let d = means[i] - truth[i];
        sse += d * d;
        max_abs = max_abs.max(d.abs());
    }
    let truth_mean = truth.iter().sum::<f64>() / n as f64;
    let denom = match q2_mode {
        Q2Mode::Standard => truth.iter().map(|y| (y - truth_mean).powi(2)).sum::<f64>(),
        Q2Mode::PredictedCentered => means.iter().map(|m| (m - truth_mean).powi(2)).sum::<f64>(),
    };
    let q2 = if denom > 0.0 { Some(1.0 - sse / denom) } else { None };

    let (avg_std, median_std, max_std) = if stds.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let avg = stds.iter().sum::<f64>() / n as f64;
        let mut sorted = stds.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        (avg, median, sorted[n - 1])
    };
    Ok(MetricsReport {
        rmse: (sse / n as f64).sqrt(),
        q2,
        max_abs_error: max_abs,
        avg_pred_std: avg_std,
        median_pred_std: median_std,
        max_pred_std: max_std,
        n_test: n,
    })
}

/// One cross validation fold result. `index` is the row of the held-out
/// point in the most expensive input level, as supplied by the caller.
#[derive(Clone, Debug)]
pub struct LooRow {
    pub index: usize,
    pub x: Vec<f64>,
    pub truth: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug)]
pub struct LooReport {
    pub rows: Vec<LooRow>,
    pub rmse: f64,
    /// True when the fold fits re-optimized the correlation lengths rather
    /// than reusing the full-fit estimates.
    pub refitted_theta: bool,
}

fn theta_of(model: &FittedModel) -> Vec<Vec<f64>> {
    (0..model.s())
        .map(|t| model.structures.level(t).kernel.theta.clone())
        .collect()
}

/// Leave-one-out cross validation over points of the most expensive level.
///
/// Each fold removes the held-out point from every level it appears in (all
/// of them, by nesting), refits on the remainder, and predicts at the
/// held-out input. `cv.keep_cheap = true` removes it from the expensive
/// level only, which validates the expensive surface while keeping the
/// cheap information; the default matches the honest protocol.
///
/// `ids`, when given, are 0-based rows of the expensive-level inputs;
/// the default is every point. The correlation lengths are handled per
/// `cv.theta`: `fixed` reuses the full-fit values, `refit` re-optimizes in
/// every fold, `auto` refits only when the full fit optimized them and the
/// number of folds does not exceed `cv.refit_limit`.
pub fn loo_cv(
    levels: &[DesignSet],
    observations: &[DVector<f64>],
    config: &RunConfig,
    ids: Option<&[usize]>,
) -> Result<LooReport> {
    if levels.is_empty() || levels.len() != observations.len() {
        return Err(CokrigError::invalid(
            "cross validation needs matched designs and observations",
        ));
    }
    let top = levels.len() - 1;
    let n_top = levels[top].n();
    let all_ids: Vec<usize>;
    let ids: &[usize] = match ids {
        Some(ids) => ids,
        None => {
            all_ids = (0..n_top).collect();
            &all_ids
        }
    };
    for &id in ids {
        if id >= n_top {
            return Err(CokrigError::InvalidParameter {
                name: "cv ids".into(),
                reason: format!(
                    "id {id} is out of range: the most expensive level has {n_top} points \
                     (held-out points are removed from every level, so they must be \
                     observed at the most expensive one)"
                ),
            });
        }
    }

    // one full fit fixes the fold correlation lengths when not refitting
    let full = fit(levels.to_vec(), observations.to_vec(), config)?;
    let optimized = config.kernel.theta_fixed.is_empty()
        || config.kernel.theta_fixed.iter().any(|t| t.is_empty());
    let refit = match config.cv.theta.as_str() {
        "fixed" => false,
        "refit" => true,
        "auto" => optimized && ids.len() <= config.cv.refit_limit,
        other => {
            return Err(CokrigError::InvalidParameter {
                name: "cv.theta".into(),
                reason: format!("unknown mode {other:?}; use auto, refit or fixed"),
            })
        }
    };
    let mut fold_config = config.clone();
    if !refit {
        fold_config.kernel.theta_fixed = theta_of(&full);
    }
    let tol = config.nesting.tolerance;
    let keep_cheap = config.cv.keep_cheap;

    let rows: Result<Vec<LooRow>> = ids
        .par_iter()
        .map(|&id| {
            let x = levels[top].point(id).to_vec();
            let truth = observations[top][id];
            let mut fold_levels = Vec::with_capacity(levels.len());
            let mut fold_obs = Vec::with_capacity(levels.len());
            for (t, (design, z)) in levels.iter().zip(observations).enumerate() {
                if keep_cheap && t != top {
                    fold_levels.push(design.clone());
                    fold_obs.push(z.clone());
                    continue;
                }
                let mut pts = Vec::with_capacity(design.n());
                let mut vals = Vec::with_capacity(design.n());
                for (i, p) in design.points().iter().enumerate() {
                    if !points_match(p, &x, tol) {
                        pts.push(p.clone());
                        vals.push(z[i]);
                    }
                }
                if pts.is_empty() {
                    return Err(CokrigError::invalid(format!(
                        "removing point {id} empties level {}",
                        t + 1
                    )));
                }
                fold_levels.push(DesignSet::new(pts)?);
                fold_obs.push(DVector::from_vec(vals));
            }
            let model = fit(fold_levels, fold_obs, &fold_config).map_err(|e| {
                CokrigError::invalid(format!("cross validation fold {id} failed: {e}"))
            })?;
            let p = predict_one(&model, &x);
            Ok(LooRow {
                index: id,
                x,
                truth,
                mean: p.mean,
                std: p.std(),
            })
        })
        .collect();
    let rows = rows?;
    let sse: f64 = rows.iter().map(|r| (r.mean - r.truth).powi(2)).sum();
    Ok(LooReport {
        rmse: (sse / rows.len() as f64).sqrt(),
        rows,
        refitted_theta: refit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn metrics_against_hand_values() {
        let truth = [1.0, 2.0, 3.0, 4.0];
        let means = [1.1, 1.9, 3.2, 3.8];
        let stds = [0.1, 0.4, 0.2, 0.3];
        let m = compute_metrics(&truth, &means, &stds, Q2Mode::Standard).unwrap();
        let sse = 0.01 + 0.01 + 0.04 + 0.04;
        assert_relative_eq!(m.rmse, (sse / 4.0_f64).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(m.q2.unwrap(), 1.0 - sse / 5.0, epsilon = 1e-14);
        assert_relative_eq!(m.max_abs_error, 0.2, epsilon = 1e-14);
        assert_relative_eq!(m.avg_pred_std, 0.25, epsilon = 1e-14);
        assert_relative_eq!(m.median_pred_std, 0.25, epsilon = 1e-14);
        assert_relative_eq!(m.max_pred_std, 0.4, epsilon = 1e-14);
    }

    #[test]
    fn q2_is_none_for_constant_truth() {
        let truth = [2.0, 2.0, 2.0];
        let means = [2.1, 1.9, 2.0];
        let m = compute_metrics(&truth, &means, &[], Q2Mode::Standard).unwrap();
        assert!(m.q2.is_none());
        assert_eq!(m.avg_pred_std, 0.0);
    }

    #[test]
    fn predicted_centered_q2_uses_the_other_denominator() {
        let truth = [0.0, 1.0, 2.0];
        let means = [0.5, 1.0, 1.5];
        let a = compute_metrics(&truth, &means, &[], Q2Mode::Standard)
            .unwrap()
            .q2
            .unwrap();
        let b = compute_metrics(&truth, &means, &[], Q2Mode::PredictedCentered)
            .unwrap()
            .q2
            .unwrap();
        // denominator: sum (y - 1)^2 = 2 vs sum (m - 1)^2 = 0.5
        let sse = 0.25 + 0.0 + 0.25;
        assert_relative_eq!(a, 1.0 - sse / 2.0, epsilon = 1e-14);
        assert_relative_eq!(b, 1.0 - sse / 0.5, epsilon = 1e-14);
    }

    fn two_level_instance() -> (Vec<DesignSet>, Vec<DVector<f64>>, RunConfig) {
        let f1 = |x: f64| (11.0 * x).sin() + 0.3 * x;
        let f2 = |x: f64| 1.4 * f1(x) + 0.4 * (2.0 * x).cos();
        let d1: Vec<f64> = (0..13).map(|i| i as f64 / 12.0).collect();
        let d2: Vec<f64> = (0..7).map(|i| i as f64 * 2.0 / 12.0).collect();
        let z1 = DVector::from_iterator(13, d1.iter().map(|&x| f1(x)));
        let z2 = DVector::from_iterator(7, d2.iter().map(|&x| f2(x)));
        let levels = vec![
            DesignSet::new(d1.iter().map(|&x| vec![x]).collect()).unwrap(),
            DesignSet::new(d2.iter().map(|&x| vec![x]).collect()).unwrap(),
        ];
        let mut config = RunConfig::default();
        config.kernel.family = "squared-exponential".into();
        config.kernel.theta_fixed = vec![vec![0.3], vec![0.35]];
        (levels, vec![z1, z2], config)
    }

    #[test]
    fn loo_removes_the_point_from_every_level() {
        let (levels, obs, config) = two_level_instance();
        let report = loo_cv(&levels, &obs, &config, Some(&[2])).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert_eq!(row.index, 2);
        // the held-out point is interpolated by neither level, so the
        // prediction is a genuine out-of-sample one with positive spread
        assert!(row.std > 1e-8, "std = {}", row.std);
        assert!((row.mean - row.truth).abs() < 0.5);
        assert!(!report.refitted_theta);
    }

    #[test]
    fn keep_cheap_variant_keeps_the_cheap_observation() {
        let (levels, obs, mut config) = two_level_instance();
        let honest = loo_cv(&levels, &obs, &config, Some(&[3])).unwrap();
        config.cv.keep_cheap = true;
        let cheap = loo_cv(&levels, &obs, &config, Some(&[3])).unwrap();
        // keeping the cheap observation at the held-out input can only
        // sharpen the prediction
        assert!(cheap.rows[0].std <= honest.rows[0].std + 1e-12);
    }

    #[test]
    fn loo_rejects_out_of_range_ids() {
        let (levels, obs, config) = two_level_instance();
        let err = loo_cv(&levels, &obs, &config, Some(&[99]));
        assert!(err.is_err());
        let msg = format!("{}", err.err().unwrap());
        assert!(msg.contains("most expensive"), "message: {msg}");
    }

    #[test]
    fn full_loo_rmse_is_small_on_a_smooth_problem() {
        let (levels, obs, config) = two_level_instance();
        let report = loo_cv(&levels, &obs, &config, None).unwrap();
        assert_eq!(report.rows.len(), 7);
        assert!(report.rmse < 0.6, "rmse = {}", report.rmse);
    }
}
