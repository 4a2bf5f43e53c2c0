//! Parameter estimation.
//!
//! With nested designs the joint likelihood factorizes across levels, so
//! every level is estimated on its own: the regression coefficients (scale
//! coefficients against the previous level's observations, then the level's
//! trend) have a closed-form generalized least squares solution, and the
//! level variance gets an inverse gamma law. Only the correlation length
//! scales need numerical optimization, one small problem per level.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::{Basis, FittedScale, ScaleModel};
use crate::config::RunConfig;
use crate::design::{sort_nested, DesignSet, SortedDesigns};
use crate::error::{CokrigError, Result};
use crate::kernel::{factor_spd, FactoredCorrelation, Kernel, KernelFamily, RegularizationPolicy};
use crate::model::{JointStructures, LevelStructure};

/// Conjugate posterior of one level's regression coefficients and variance,
/// conditional on the length scales.
#[derive(Clone, Debug)]
pub struct LevelPosterior {
    /// Generalized least squares estimate of (scale coeffs, trend coeffs).
    pub lambda_mean: DVector<f64>,
    /// Coefficient covariance divided by the level variance.
    pub lambda_cov_over_sigma2: DMatrix<f64>,
    /// Inverse gamma shape of the level variance.
    pub alpha: f64,
    /// Inverse gamma scale: half the generalized residual sum of squares.
    pub q_half: f64,
    /// Point estimate 2 q_half / dof.
    pub sigma2: f64,
    pub dof: usize,
    pub n: usize,
}

/// Regression matrix of one level: the scale basis columns multiplied
/// pointwise by the previous level's observations, then the trend columns.
pub fn level_design_matrix(
    points: &[Vec<f64>],
    trend: &Basis,
    scale: Option<(&Basis, &DVector<f64>)>,
) -> DMatrix<f64> {
    let f = trend.matrix(points);
    match scale {
        None => f,
        Some((sb, z_prev)) => {
            assert_eq!(z_prev.len(), points.len());
            let q = sb.len();
            let sm = sb.matrix(points);
            let mut h = DMatrix::zeros(points.len(), q + f.ncols());
            for c in 0..q {
                for r in 0..points.len() {
                    h[(r, c)] = sm[(r, c)] * z_prev[r];
                }
            }
            for c in 0..f.ncols() {
                for r in 0..points.len() {
                    h[(r, q + c)] = f[(r, c)];
                }
            }
            h
        }
    }
}

/// Generalized least squares against a factorized correlation matrix,
/// computed through the half solve W = L^-1 H and a QR factorization of W,
/// never through explicit inverses.
pub fn posterior_level(
    factored: &FactoredCorrelation,
    h: &DMatrix<f64>,
    z: &DVector<f64>,
    q_scale: usize,
    level: usize,
) -> Result<LevelPosterior> {
    let n = z.len();
    let k = h.ncols();
    assert_eq!(h.nrows(), n);
    if n <= k {
        return Err(CokrigError::InsufficientData {
            level,
            n,
            p: k - q_scale,
            q: q_scale,
        });
    }
    let dof = n - k;
    let w = factored.solve_lower_matrix(h);
    let y = factored.solve_lower(z);
    let qr = w.clone().qr();
    let r = qr.r();
    let max_pivot = (0..k).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    let min_pivot = (0..k).map(|i| r[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if !(min_pivot > max_pivot * 1e-12) {
        return Err(CokrigError::CollinearRegressors { level });
    }
    let qty = qr.q().transpose() * &y;
    let lambda_mean = r
        .solve_upper_triangular(&qty)
        .ok_or(CokrigError::CollinearRegressors { level })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or(CokrigError::CollinearRegressors { level })?;
    let lambda_cov_over_sigma2 = &r_inv * r_inv.transpose();
    let resid = &y - &w * &lambda_mean;
    let q_full = resid.norm_squared();
    let alpha = dof as f64 / 2.0;
    Ok(LevelPosterior {
        lambda_mean,
        lambda_cov_over_sigma2,
        alpha,
        q_half: q_full / 2.0,
        sigma2: q_full / dof as f64,
        dof,
        n,
    })
}

/// Restricted likelihood criterion for the length scales of one level, with
/// the coefficients and variance profiled out:
/// log det R + dof log sigma2_hat. Smaller is better.
pub fn concentrated_restricted_nll(
    family: KernelFamily,
    theta: &[f64],
    points: &[Vec<f64>],
    h: &DMatrix<f64>,
    z: &DVector<f64>,
    q_scale: usize,
    policy: &RegularizationPolicy,
    level: usize,
) -> Result<f64> {
    let kernel = Kernel::new(family, theta.to_vec())?;
    let r = kernel.cross_matrix(points, points);
    let factored = factor_spd(&r, policy, 1.0, &format!("level {level} correlation"))?;
    let post = posterior_level(&factored, h, z, q_scale, level)?;
    let s2 = post.sigma2.max(f64::MIN_POSITIVE);
    Ok(factored.log_det() + post.dof as f64 * s2.ln())
}

/// Search options for the length scale optimizer. Bounds are in natural
/// scale; the search happens in log scale.
#[derive(Clone, Debug)]
pub struct ThetaSearch {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub starts: usize,
    pub top_starts: usize,
    pub sweeps: usize,
    pub tol_log: f64,
    pub seed: u64,
}

/// Minimizes an objective over length scales: Latin hypercube restarts in
/// log scale, then coordinate golden section descent from the best starts.
/// Fully deterministic for a given seed. The objective may return infinity
/// to veto a point.
pub fn optimize_theta<F>(objective: &F, search: &ThetaSearch) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = search.lower.len();
    assert_eq!(search.upper.len(), d);
    let lo: Vec<f64> = search.lower.iter().map(|v| v.ln()).collect();
    let hi: Vec<f64> = search.upper.iter().map(|v| v.ln()).collect();
    let eval_log = |logs: &[f64]| {
        let theta: Vec<f64> = logs.iter().map(|v| v.exp()).collect();
        objective(&theta)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let n = search.starts.max(1);
    let mut cells: Vec<Vec<usize>> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        cells.push(perm);
    }
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut p = Vec::with_capacity(d);
        for (j, perm) in cells.iter().enumerate() {
            let u: f64 = rng.gen();
            let frac = (perm[i] as f64 + u) / n as f64;
            p.push(lo[j] + frac * (hi[j] - lo[j]));
        }
        starts.push(p);
    }

    let scored: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|p| (eval_log(p), p.clone()))
        .collect();
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));

    let seeds: Vec<Vec<f64>> = order
        .iter()
        .take(search.top_starts.max(1))
        .map(|&i| scored[i].1.clone())
        .collect();
    let refined: Vec<(f64, Vec<f64>)> = seeds
        .par_iter()
        .map(|start| {
            let mut x = start.clone();
            let mut fx = eval_log(&x);
            for _ in 0..search.sweeps.max(1) {
                let before = fx;
                for j in 0..d {
                    let line = |v: f64| {
                        let mut y = x.clone();
                        y[j] = v;
                        eval_log(&y)
                    };
                    let (best, fbest) = golden_min(&line, lo[j], hi[j], search.tol_log);
                    if fbest < fx {
                        x[j] = best;
                        fx = fbest;
                    }
                }
                if !(before - fx > 1e-10) {
                    break;
                }
            }
            (fx, x)
        })
        .collect();

    let mut best = (f64::INFINITY, starts[0].clone());
    for (f, x) in scored.into_iter().chain(refined) {
        if f < best.0 {
            best = (f, x);
        }
    }
    (best.1.iter().map(|v| v.exp()).collect(), best.0)
}

fn golden_min<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    if b - a <= tol {
        let m = 0.5 * (a + b);
        return (m, f(m));
    }
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// A fitted multi-fidelity model: joint structures, per-level posteriors,
/// and everything prediction needs precomputed.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub structures: JointStructures,
    pub posteriors: Vec<LevelPosterior>,
    /// Trend coefficients of all levels, stacked in level order.
    pub beta_full: DVector<f64>,
    /// Observations per level, in canonical design order.
    pub observations: Vec<DVector<f64>>,
    /// All observations stacked.
    pub z_stacked: DVector<f64>,
    /// z - H beta_full, reused by every prediction.
    pub residual: DVector<f64>,
    pub config: RunConfig,
}

impl FittedModel {
    pub fn s(&self) -> usize {
        self.structures.s()
    }

    pub fn dim(&self) -> usize {
        self.structures.dim()
    }

    /// Observations of level t restricted to the design of level t+1 (the
    /// trailing block, thanks to the canonical ordering).
    pub fn obs_tail(&self, t: usize) -> DVector<f64> {
        let n_next = self.structures.designs().n(t + 1);
        let z = &self.observations[t];
        z.rows(z.len() - n_next, n_next).into_owned()
    }

    pub fn summary(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let s = self.s();
        let _ = writeln!(out, "levels: {s}, input dimension: {}", self.dim());
        for t in 0..s {
            let lvl = self.structures.level(t);
            let post = &self.posteriors[t];
            let _ = writeln!(
                out,
                "level {}: n = {}, theta = {:?}, nugget = {:.1e}, sigma2 = {:.6e}",
                t + 1,
                post.n,
                lvl.kernel.theta,
                lvl.factored.nugget(),
                lvl.sigma2
            );
            let _ = writeln!(out, "  trend {:?} coefficients {:?}", lvl.trend.tokens(), {
                let p = lvl.trend.len();
                let l = &post.lambda_mean;
                (l.len() - p..l.len()).map(|i| l[i]).collect::<Vec<_>>()
            });
            if t > 0 {
                let sc = &self.structures.scales()[t - 1];
                match sc.as_constant() {
                    Some(c) => {
                        let _ = writeln!(out, "  scale vs level {}: constant {c:.6}", t);
                    }
                    None => {
                        let _ = writeln!(
                            out,
                            "  scale vs level {}: {:?} coefficients {:?}",
                            t,
                            sc.basis.tokens(),
                            sc.coeffs.as_slice()
                        );
                    }
                }
            }
        }
        out
    }
}

fn per_level_bases(spec: &[Vec<String>], s: usize, dim: usize, what: &str) -> Result<Vec<Basis>> {
    if spec.is_empty() {
        return Ok((0..s).map(|_| Basis::constant()).collect());
    }
    if spec.len() != s {
        return Err(CokrigError::InvalidParameter {
            name: what.into(),
            reason: format!("expected {s} basis lists, got {}", spec.len()),
        });
    }
    spec.iter().map(|t| Basis::from_tokens(t, dim)).collect()
}

/// Fits an s-level model: sorts the designs into canonical nested order,
/// then estimates every level in sequence (length scales by restricted
/// likelihood unless fixed in the config, coefficients and variance in
/// closed form).
pub fn fit(
    levels: Vec<DesignSet>,
    observations: Vec<DVector<f64>>,
    config: &RunConfig,
) -> Result<FittedModel> {
    let family: KernelFamily = config.kernel.family.parse()?;
    let (sorted, obs) = sort_nested(levels, observations, config.nesting.tolerance)?;
    let s = sorted.s();
    let dim = sorted.dim();

    let trends = per_level_bases(&config.trend.bases, s, dim, "trend.bases")?;
    let scale_models: Vec<ScaleModel> = if config.scale.bases.is_empty() {
        (0..s.saturating_sub(1)).map(|_| ScaleModel::constant()).collect()
    } else {
        if config.scale.bases.len() != s - 1 {
            return Err(CokrigError::InvalidParameter {
                name: "scale.bases".into(),
                reason: format!("expected {} basis lists, got {}", s - 1, config.scale.bases.len()),
            });
        }
        config
            .scale
            .bases
            .iter()
            .map(|t| Basis::from_tokens(t, dim).map(ScaleModel::with_basis))
            .collect::<Result<Vec<_>>>()?
    };

    if !config.kernel.theta_fixed.is_empty() && config.kernel.theta_fixed.len() != s {
        return Err(CokrigError::InvalidParameter {
            name: "kernel.theta_fixed".into(),
            reason: format!("expected {s} entries (one per level, empty to optimize), got {}", config.kernel.theta_fixed.len()),
        });
    }

    // per-coordinate input range of the cheapest design bounds the search
    let mut range = vec![0.0f64; dim];
    for j in 0..dim {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in sorted.levels[0].points() {
            lo = lo.min(p[j]);
            hi = hi.max(p[j]);
        }
        range[j] = if hi > lo { hi - lo } else { 1.0 };
    }

    let mut level_structs = Vec::with_capacity(s);
    let mut posteriors = Vec::with_capacity(s);
    let mut fitted_scales = Vec::with_capacity(s.saturating_sub(1));

    for t in 0..s {
        let points = sorted.levels[t].points().to_vec();
        let q_scale = if t == 0 { 0 } else { scale_models[t - 1].len() };
        let z_prev_tail = if t == 0 {
            None
        } else {
            let z_prev = &obs[t - 1];
            Some(z_prev.rows(z_prev.len() - sorted.n(t), sorted.n(t)).into_owned())
        };
        let h = level_design_matrix(
            &points,
            &trends[t],
            z_prev_tail
                .as_ref()
                .map(|z| (&scale_models[t - 1].basis, z)),
        );
        let z = &obs[t];

        let theta = match config.kernel.theta_fixed.get(t) {
            Some(fixed) if !fixed.is_empty() => {
                if fixed.len() != dim {
                    return Err(CokrigError::InvalidParameter {
                        name: format!("kernel.theta_fixed[{t}]"),
                        reason: format!("expected {dim} length scales, got {}", fixed.len()),
                    });
                }
                fixed.clone()
            }
            _ => {
                let policy = config.regularization.clone();
                let obj = |theta: &[f64]| {
                    match concentrated_restricted_nll(
                        family, theta, &points, &h, z, q_scale, &policy, t + 1,
                    ) {
                        Ok(v) if v.is_finite() => v,
                        _ => f64::INFINITY,
                    }
                };
                let search = ThetaSearch {
                    lower: range.iter().map(|r| r * config.kernel.theta_lower_scale).collect(),
                    upper: range.iter().map(|r| r * config.kernel.theta_upper_scale).collect(),
                    starts: config.optimizer.starts,
                    top_starts: config.optimizer.top_starts,
                    sweeps: config.optimizer.sweeps,
                    tol_log: config.optimizer.tol_log,
                    seed: config
                        .seed
                        .wrapping_add((t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                };
                let (theta, value) = optimize_theta(&obj, &search);
                if !value.is_finite() {
                    return Err(CokrigError::StillSingular {
                        what: format!("level {} correlation at every searched length scale", t + 1),
                        last_nugget: *config.regularization.nuggets.last().unwrap_or(&0.0),
                    });
                }
                theta
            }
        };

        let kernel = Kernel::new(family, theta)?;
        let r = kernel.cross_matrix(&points, &points);
        let factored = factor_spd(
            &r,
            &config.regularization,
            1.0,
            &format!("level {} correlation", t + 1),
        )?;
        let post = posterior_level(&factored, &h, z, q_scale, t + 1)?;

        if t > 0 {
            let coeffs = DVector::from_fn(q_scale, |i, _| post.lambda_mean[i]);
            fitted_scales.push(FittedScale::new(scale_models[t - 1].basis.clone(), coeffs));
        }
        level_structs.push(LevelStructure {
            kernel,
            factored,
            trend: trends[t].clone(),
            sigma2: post.sigma2,
        });
        posteriors.push(post);
    }

    build_fitted(sorted, obs, level_structs, fitted_scales, posteriors, config.clone())
}

/// Assembles the fitted model pieces, computing the stacked residual.
pub(crate) fn build_fitted(
    sorted: SortedDesigns,
    obs: Vec<DVector<f64>>,
    level_structs: Vec<LevelStructure>,
    fitted_scales: Vec<FittedScale>,
    posteriors: Vec<LevelPosterior>,
    config: RunConfig,
) -> Result<FittedModel> {
    let s = sorted.s();
    let structures = JointStructures::new(sorted, level_structs, fitted_scales);
    let mut beta_parts = Vec::with_capacity(s);
    for t in 0..s {
        let p = structures.level(t).trend.len();
        let l = &posteriors[t].lambda_mean;
        beta_parts.push(l.rows(l.len() - p, p).into_owned());
    }
    let beta_full = DVector::from_iterator(
        beta_parts.iter().map(|b| b.len()).sum(),
        beta_parts.iter().flat_map(|b| b.iter().copied()),
    );
    let z_stacked = DVector::from_iterator(
        obs.iter().map(|z| z.len()).sum(),
        obs.iter().flat_map(|z| z.iter().copied()),
    );
    let residual = &z_stacked - structures.h_matrix() * &beta_full;
    Ok(FittedModel {
        structures,
        posteriors,
        beta_full,
        observations: obs,
        z_stacked,
        residual,
        config,
    })
}
