//! Fully Bayesian prediction for the two-level model.
//!
//! The plug-in path (`predict`) freezes the regression coefficients and the
//! level variances at their estimates. Here both are integrated out: the
//! coefficient blocks carry conditional Gaussian laws, the two level
//! variances carry inverse gamma laws, and the predictive distribution is a
//! mixture. The variance axes are handled by a small quadrature between
//! inverse gamma quantiles; inside each node the scale and expensive-trend
//! coefficients are integrated by antithetic Monte Carlo particles (or a
//! trapezoid grid in up to two dimensions), while the cheap-level
//! coefficients integrate in closed form.
//!
//! Everything in this module is specific to s = 2; the recursive machinery
//! elsewhere has no such restriction.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::config::{PriorGroupConfig, RunConfig};
use crate::error::{CokrigError, Result};
use crate::estimate::{FittedModel, LevelPosterior};

/// Prior on one (coefficients, variance) group.
#[derive(Clone, Debug)]
pub enum GroupPrior {
    /// Jeffreys prior; the posterior is the generalized least squares law.
    NonInformative,
    /// Normal-inverse-gamma with diagonal coefficient covariance `v_diag`
    /// (relative to the level variance), coefficient mean `b`, and inverse
    /// gamma shape / scale `alpha` / `gamma`.
    Informative {
        b: DVector<f64>,
        v_diag: DVector<f64>,
        alpha: f64,
        gamma: f64,
    },
}

impl GroupPrior {
    pub fn from_config(cfg: &PriorGroupConfig, k: usize, which: &str) -> Result<Self> {
        match cfg.regime.as_str() {
            "non-informative" | "noninformative" | "jeffreys" => Ok(GroupPrior::NonInformative),
            "informative" => {
                if cfg.b.len() != k {
                    return Err(CokrigError::DimensionMismatch {
                        context: format!("prior mean b for {which}"),
                        expected: k,
                        got: cfg.b.len(),
                    });
                }
                if cfg.v_diag.len() != k {
                    return Err(CokrigError::DimensionMismatch {
                        context: format!("prior covariance diagonal for {which}"),
                        expected: k,
                        got: cfg.v_diag.len(),
                    });
                }
                let bad_v = cfg.v_diag.iter().any(|&v| !(v > 0.0) || !v.is_finite());
                if bad_v || !(cfg.alpha > 0.0) || !(cfg.gamma > 0.0) {
                    return Err(CokrigError::InvalidParameter {
                        name: format!("prior for {which}"),
                        reason: "informative priors need v_diag > 0, alpha > 0, gamma > 0".into(),
                    });
                }
                Ok(GroupPrior::Informative {
                    b: DVector::from_vec(cfg.b.clone()),
                    v_diag: DVector::from_vec(cfg.v_diag.clone()),
                    alpha: cfg.alpha,
                    gamma: cfg.gamma,
                })
            }
            other => Err(CokrigError::InvalidParameter {
                name: format!("prior regime for {which}"),
                reason: format!("unknown regime {other:?}; use non-informative or informative"),
            }),
        }
    }
}

/// Priors for both groups of the two-level model.
#[derive(Clone, Debug)]
pub struct Priors2Level {
    pub level1: GroupPrior,
    pub level2: GroupPrior,
}

impl Priors2Level {
    pub fn non_informative() -> Self {
        Priors2Level {
            level1: GroupPrior::NonInformative,
            level2: GroupPrior::NonInformative,
        }
    }

    /// Reads both groups from the run configuration, checking dimensions
    /// against the fitted model (p1 for level 1; q + p2 for level 2).
    pub fn from_config(config: &RunConfig, model: &FittedModel) -> Result<Self> {
        let p1 = model.structures.level(0).trend.len();
        let k2 = model.posteriors[1].lambda_mean.len();
        Ok(Priors2Level {
            level1: GroupPrior::from_config(&config.prior.level1, p1, "level 1")?,
            level2: GroupPrior::from_config(&config.prior.level2, k2, "level 2")?,
        })
    }
}

/// Conditional normal-inverse-gamma law of one (coefficients, variance)
/// group: coefficients are Gaussian with covariance `sigma2 *
/// cov_over_sigma2`, the variance is inverse gamma with shape `alpha` and
/// scale `q_half`.
#[derive(Clone, Debug)]
pub struct GaussIgLaw {
    pub mean: DVector<f64>,
    pub cov_over_sigma2: DMatrix<f64>,
    pub alpha: f64,
    pub q_half: f64,
    /// Point estimate q_half / alpha; the collapse value when the variance
    /// axis degenerates.
    pub sigma2_point: f64,
    /// Set when the level variance is negligible against the observation
    /// variance; the quadrature then collapses this axis to a point.
    pub degenerate: bool,
}

#[derive(Clone, Debug)]
pub struct PosteriorLaws2Level {
    pub level1: GaussIgLaw,
    pub level2: GaussIgLaw,
}

/// Conjugate update of one generalized least squares posterior by an
/// informative normal-inverse-gamma prior. With M the GLS coefficient
/// covariance over sigma2, the posterior covariance over sigma2 becomes
/// (M^-1 + V^-1)^-1, the mean the matching precision-weighted blend, the
/// shape n/2 + alpha, and the scale gains gamma plus the prior-data
/// disagreement (b - lambda)' (V + M)^-1 (b - lambda), all halved.
fn informative_update(
    lambda: &DVector<f64>,
    m: &DMatrix<f64>,
    q_half: f64,
    n: usize,
    b: &DVector<f64>,
    v_diag: &DVector<f64>,
    prior_alpha: f64,
    prior_gamma: f64,
) -> Result<(DVector<f64>, DMatrix<f64>, f64, f64)> {
    let k = lambda.len();
    let m_chol = Cholesky::new(m.clone()).ok_or_else(|| {
        CokrigError::invalid("coefficient covariance lost positive definiteness in the prior update")
    })?;
    let m_inv = m_chol.inverse();
    let mut precision = m_inv.clone();
    for i in 0..k {
        precision[(i, i)] += 1.0 / v_diag[i];
    }
    let a_chol = Cholesky::new(precision).ok_or_else(|| {
        CokrigError::invalid("posterior precision lost positive definiteness in the prior update")
    })?;
    let cov = a_chol.inverse();
    let mut rhs = &m_inv * lambda;
    for i in 0..k {
        rhs[i] += b[i] / v_diag[i];
    }
    let mean = &cov * rhs;

    let mut disagreement = m.clone();
    for i in 0..k {
        disagreement[(i, i)] += v_diag[i];
    }
    let d = b - lambda;
    let s_chol = Cholesky::new(disagreement).ok_or_else(|| {
        CokrigError::invalid("prior-data covariance lost positive definiteness in the prior update")
    })?;
    let quad = d.dot(&s_chol.solve(&d));
    let alpha = 0.5 * n as f64 + prior_alpha;
    let new_q_half = 0.5 * (prior_gamma + quad) + q_half;
    Ok((mean, cov, alpha, new_q_half))
}

fn law_from(posterior: &LevelPosterior, prior: &GroupPrior, obs_var: f64, degenerate_rel: f64) -> Result<GaussIgLaw> {
    let (mean, cov, alpha, q_half) = match prior {
        GroupPrior::NonInformative => (
            posterior.lambda_mean.clone(),
            posterior.lambda_cov_over_sigma2.clone(),
            posterior.alpha,
            posterior.q_half,
        ),
        GroupPrior::Informative {
            b,
            v_diag,
            alpha,
            gamma,
        } => informative_update(
            &posterior.lambda_mean,
            &posterior.lambda_cov_over_sigma2,
            posterior.q_half,
            posterior.n,
            b,
            v_diag,
            *alpha,
            *gamma,
        )?,
    };
    let sigma2_point = q_half / alpha;
    let degenerate = sigma2_point < degenerate_rel * obs_var.max(f64::MIN_POSITIVE);
    Ok(GaussIgLaw {
        mean,
        cov_over_sigma2: cov,
        alpha,
        q_half,
        sigma2_point,
        degenerate,
    })
}

fn sample_variance(z: &DVector<f64>) -> f64 {
    let n = z.len() as f64;
    let mean = z.sum() / n;
    z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Posterior laws of both parameter groups given the fitted two-level model
/// and the priors. Under non-informative priors these are exactly the
/// per-level generalized least squares posteriors; informative priors blend
/// in through the conjugate update.
pub fn posterior_laws(model: &FittedModel, priors: &Priors2Level) -> Result<PosteriorLaws2Level> {
    if model.s() != 2 {
        return Err(CokrigError::InvalidParameter {
            name: "model".into(),
            reason: format!(
                "the fully Bayesian path covers exactly two levels, the model has {}",
                model.s()
            ),
        });
    }
    let rel = model.config.bayes.degenerate_rel;
    let v1 = sample_variance(&model.observations[0]);
    let v2 = sample_variance(&model.observations[1]);
    Ok(PosteriorLaws2Level {
        level1: law_from(&model.posteriors[0], &priors.level1, v1, rel)?,
        level2: law_from(&model.posteriors[1], &priors.level2, v2, rel)?,
    })
}

/// Per-query precomputation: the predictive mean is affine in the level 2
/// coefficient vector lambda = (scale coeffs, trend coeffs), and the
/// predictive variance at fixed lambda and level variances is
/// rho(x)^2 sigma1^2 c1 + sigma2^2 c2 with constants c1, c2 independent of
/// the parameters. One profile turns every particle evaluation into a couple
/// of dot products.
#[derive(Clone, Debug)]
pub struct QueryProfile {
    pub w0: f64,
    pub w: DVector<f64>,
    pub c1: f64,
    pub c2: f64,
    pub scale_feats: DVector<f64>,
}

impl QueryProfile {
    pub fn mean(&self, lambda: &DVector<f64>) -> f64 {
        self.w0 + self.w.dot(lambda)
    }

    pub fn rho(&self, lambda: &DVector<f64>) -> f64 {
        let q = self.scale_feats.len();
        let mut r = 0.0;
        for i in 0..q {
            r += self.scale_feats[i] * lambda[i];
        }
        r
    }

    pub fn variance(&self, lambda: &DVector<f64>, sigma1_sq: f64, sigma2_sq: f64) -> f64 {
        let rho = self.rho(lambda);
        (rho * rho * sigma1_sq * self.c1 + sigma2_sq * self.c2).max(0.0)
    }
}

/// Builds the affine-mean profile of one query point against the level 1
/// coefficient law. Derivation: substituting the level 1 posterior mean and
/// expanding the two-level weights shows every occurrence of the scale
/// coefficients is linear, with the cross terms cancelling; the level 1
/// coefficient covariance enters the variance only through
/// k1 = rho(x) (f1(x) - F1' R1^-1 r1(x)).
pub fn query_profile(model: &FittedModel, law1: &GaussIgLaw, x: &[f64]) -> Result<QueryProfile> {
    if model.s() != 2 {
        return Err(CokrigError::InvalidParameter {
            name: "model".into(),
            reason: format!(
                "the fully Bayesian path covers exactly two levels, the model has {}",
                model.s()
            ),
        });
    }
    if x.len() != model.dim() {
        return Err(CokrigError::DimensionMismatch {
            context: "query point".into(),
            expected: model.dim(),
            got: x.len(),
        });
    }
    let st = &model.structures;
    let d = st.designs();
    let pts1 = d.levels[0].points();
    let pts2 = d.levels[1].points();
    let scale_basis = &st.scales()[0].basis;
    let q = scale_basis.len();
    let p2 = st.level(1).trend.len();

    let r1x = st.level(0).kernel.cross_vector(x, pts1);
    let r2x = st.level(1).kernel.cross_vector(x, pts2);
    let a1 = st.level(0).factored.solve(&r1x);
    let a2 = st.level(1).factored.solve(&r2x);
    let e1 = r1x.dot(&a1);
    let e2 = r2x.dot(&a2);

    let f1x = st.level(0).trend.eval(x);
    let f1_d1 = st.level(0).trend.matrix(pts1);
    let beta1 = &law1.mean;
    if beta1.len() != f1x.len() {
        return Err(CokrigError::DimensionMismatch {
            context: "level 1 coefficient law".into(),
            expected: f1x.len(),
            got: beta1.len(),
        });
    }
    let res1 = &model.observations[0] - &f1_d1 * beta1;
    // cheap-surface point estimate at x under the level 1 law
    let base = f1x.dot(beta1) + a1.dot(&res1);

    let z1_tail = model.obs_tail(0);
    let z2 = &model.observations[1];
    let scale_feats = scale_basis.eval(x);
    let scale_mat = scale_basis.matrix(pts2);
    let f2x = st.level(1).trend.eval(x);
    let f2_d2 = st.level(1).trend.matrix(pts2);

    let mut w = DVector::zeros(q + p2);
    for k in 0..q {
        let mut tail = 0.0;
        for i in 0..z2.len() {
            tail += a2[i] * scale_mat[(i, k)] * z1_tail[i];
        }
        w[k] = scale_feats[k] * base - tail;
    }
    for j in 0..p2 {
        let mut proj = 0.0;
        for i in 0..z2.len() {
            proj += f2_d2[(i, j)] * a2[i];
        }
        w[q + j] = f2x[j] - proj;
    }
    let w0 = a2.dot(z2);

    let k1_tilde = &f1x - f1_d1.transpose() * &a1;
    let q1 = (k1_tilde.transpose() * &law1.cov_over_sigma2 * &k1_tilde)[(0, 0)];

    Ok(QueryProfile {
        w0,
        w,
        c1: 1.0 - e1 + q1,
        c2: 1.0 - e2,
        scale_feats,
    })
}

/// How the inner integral over the level 2 coefficients is carried out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerIntegration {
    MonteCarlo,
    Trapezoid,
}

/// Runtime options for the Bayesian predictive, normally read off the run
/// configuration.
#[derive(Clone, Debug)]
pub struct BayesOptions {
    /// Quadrature nodes per variance axis (1 collapses to the point
    /// estimate).
    pub grid: usize,
    /// Particle budget per variance node.
    pub particles: usize,
    /// Tail probability cut for the variance quadrature bounds.
    pub cutoff: f64,
    pub inner: InnerIntegration,
    pub seed: u64,
    /// Number of points of the optional density grid; 0 skips the density.
    pub density_points: usize,
}

impl BayesOptions {
    pub fn from_config(config: &RunConfig, seed: u64) -> Result<Self> {
        let inner = match config.bayes.inner.as_str() {
            "mc" | "monte-carlo" => InnerIntegration::MonteCarlo,
            "trapezoid" => InnerIntegration::Trapezoid,
            other => {
                return Err(CokrigError::InvalidParameter {
                    name: "bayes.inner".into(),
                    reason: format!("unknown method {other:?}; use mc or trapezoid"),
                })
            }
        };
        let opts = BayesOptions {
            grid: config.bayes.grid,
            particles: config.bayes.particles,
            cutoff: config.bayes.cutoff,
            inner,
            seed,
            density_points: 0,
        };
        opts.validate()?;
        Ok(opts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 {
            return Err(CokrigError::InvalidParameter {
                name: "bayes.grid".into(),
                reason: "at least one quadrature node per axis is required".into(),
            });
        }
        if self.particles < 2 {
            return Err(CokrigError::InvalidParameter {
                name: "bayes.particles".into(),
                reason: "at least two particles are required".into(),
            });
        }
        if !(self.cutoff > 0.0 && self.cutoff < 0.5) {
            return Err(CokrigError::InvalidParameter {
                name: "bayes.cutoff".into(),
                reason: "the tail cut must lie strictly between 0 and 0.5".into(),
            });
        }
        Ok(())
    }
}

/// Predictive distribution summary at one query point.
#[derive(Clone, Debug)]
pub struct BayesPrediction {
    pub mean: f64,
    pub var: f64,
    /// Optional (value, density) pairs on a regular grid around the mean.
    pub density: Option<Vec<(f64, f64)>>,
    /// Quadrature ranges actually used per variance axis (collapsed axes
    /// report the point estimate twice).
    pub sigma1_bounds: (f64, f64),
    pub sigma2_bounds: (f64, f64),
    pub nodes: usize,
    pub particles: usize,
    pub seed: u64,
}

impl BayesPrediction {
    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }
}

/// Inverse gamma density with shape `alpha` and scale `scale`.
fn ig_log_pdf(x: f64, alpha: f64, scale: f64) -> f64 {
    alpha * scale.ln() - ln_gamma(alpha) - (alpha + 1.0) * x.ln() - scale / x
}

fn ig_cdf(x: f64, alpha: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_ur(alpha, scale / x)
}

/// Quantile of the inverse gamma distribution by bracketed bisection on the
/// regularized incomplete gamma function; resolves to about 1e-12 relative.
pub fn ig_quantile(alpha: f64, scale: f64, p: f64) -> Result<f64> {
    if !(alpha > 0.0) || !(scale > 0.0) || !alpha.is_finite() || !scale.is_finite() {
        return Err(CokrigError::InvalidParameter {
            name: "inverse gamma".into(),
            reason: format!("shape and scale must be positive and finite, got {alpha}, {scale}"),
        });
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(CokrigError::InvalidParameter {
            name: "quantile level".into(),
            reason: format!("p must lie strictly in (0, 1), got {p}"),
        });
    }
    let mode = scale / (alpha + 1.0);
    let (mut lo, mut hi);
    if ig_cdf(mode, alpha, scale) < p {
        lo = mode;
        hi = mode;
        let mut guard = 0;
        while ig_cdf(hi, alpha, scale) < p {
            hi *= 4.0;
            guard += 1;
            if guard > 2000 {
                return Err(CokrigError::invalid(
                    "inverse gamma quantile bracketing failed upward",
                ));
            }
        }
    } else {
        hi = mode;
        lo = mode;
        let mut guard = 0;
        while ig_cdf(lo, alpha, scale) > p {
            lo /= 4.0;
            guard += 1;
            if guard > 2000 {
                return Err(CokrigError::invalid(
                    "inverse gamma quantile bracketing failed downward",
                ));
            }
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ig_cdf(mid, alpha, scale) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Joint log density of (beta1, lambda2, sigma1^2, sigma2^2) under the
/// posterior laws: the product of two conditional Gaussians (covariances
/// sigma_t^2 M_t) and two inverse gammas.
pub fn joint_log_density(
    laws: &PosteriorLaws2Level,
    beta1: &DVector<f64>,
    lambda2: &DVector<f64>,
    sigma1_sq: f64,
    sigma2_sq: f64,
) -> Result<f64> {
    if sigma1_sq <= 0.0 || sigma2_sq <= 0.0 {
        return Err(CokrigError::invalid(
            "the joint density is supported on positive variances",
        ));
    }
    let gauss = |x: &DVector<f64>, law: &GaussIgLaw, s: f64| -> Result<f64> {
        let k = law.mean.len();
        if x.len() != k {
            return Err(CokrigError::DimensionMismatch {
                context: "joint density argument".into(),
                expected: k,
                got: x.len(),
            });
        }
        let chol = Cholesky::new(law.cov_over_sigma2.clone()).ok_or_else(|| {
            CokrigError::invalid("coefficient covariance is not positive definite")
        })?;
        let d = x - &law.mean;
        let quad = d.dot(&chol.solve(&d)) / s;
        let mut log_det_m = 0.0;
        for i in 0..k {
            log_det_m += 2.0 * chol.l_dirty()[(i, i)].ln();
        }
        Ok(-0.5
            * (k as f64 * (2.0 * std::f64::consts::PI).ln()
                + k as f64 * s.ln()
                + log_det_m
                + quad))
    };
    let g1 = gauss(beta1, &laws.level1, sigma1_sq)?;
    let g2 = gauss(lambda2, &laws.level2, sigma2_sq)?;
    let i1 = ig_log_pdf(sigma1_sq, laws.level1.alpha, laws.level1.q_half);
    let i2 = ig_log_pdf(sigma2_sq, laws.level2.alpha, laws.level2.q_half);
    Ok(g1 + g2 + i1 + i2)
}

/// Quadrature nodes and normalized weights for one variance axis:
/// geometric nodes between the `cutoff` and `1 - cutoff` inverse gamma
/// quantiles, trapezoid widths times the density, renormalized. Degenerate
/// laws (and a one-node grid) collapse to the point estimate. With shapes at
/// or below one the inverse gamma has no mean and the truncation bounds the
/// reported spread; that is the intended reading.
fn variance_axis(law: &GaussIgLaw, grid: usize, cutoff: f64) -> Result<(Vec<(f64, f64)>, (f64, f64))> {
    if law.degenerate || grid == 1 || !(law.q_half > 0.0) {
        let point = law.sigma2_point.max(0.0);
        return Ok((vec![(point, 1.0)], (point, point)));
    }
    let lo = ig_quantile(law.alpha, law.q_half, cutoff)?;
    let hi = ig_quantile(law.alpha, law.q_half, 1.0 - cutoff)?;
    let m = grid;
    let ratio = (hi / lo).powf(1.0 / (m - 1) as f64);
    let mut nodes = Vec::with_capacity(m);
    for i in 0..m {
        nodes.push(lo * ratio.powi(i as i32));
    }
    let mut weights = Vec::with_capacity(m);
    let mut total = 0.0;
    for i in 0..m {
        let left = if i == 0 { nodes[0] } else { nodes[i - 1] };
        let right = if i == m - 1 { nodes[m - 1] } else { nodes[i + 1] };
        let width = 0.5 * (right - left);
        let w = width * ig_log_pdf(nodes[i], law.alpha, law.q_half).exp();
        weights.push(w);
        total += w;
    }
    if !(total > 0.0) {
        return Err(CokrigError::invalid(
            "variance quadrature weights vanished; the posterior law is too extreme",
        ));
    }
    let axis = nodes
        .into_iter()
        .zip(weights)
        .map(|(n, w)| (n, w / total))
        .collect();
    Ok((axis, (lo, hi)))
}

/// Standardized particle directions for the level 2 coefficients, shared
/// across all variance nodes: a draw at node (s1, s2) is mean + sqrt(s2) *
/// dir. Monte Carlo directions come in antithetic pairs so the particle
/// average of any linear functional is exact; the trapezoid grid covers up
/// to two dimensions and otherwise falls back to Monte Carlo.
fn particle_cloud(
    chol_l: Option<&DMatrix<f64>>,
    k: usize,
    opts: &BayesOptions,
) -> (Vec<DVector<f64>>, Vec<f64>) {
    let l = match chol_l {
        Some(l) => l,
        None => return (vec![DVector::zeros(k)], vec![1.0]),
    };
    let inner = if opts.inner == InnerIntegration::Trapezoid && k > 2 {
        log::warn!(
            "trapezoid inner integration supports at most two coefficient dimensions, got {k}; falling back to Monte Carlo"
        );
        InnerIntegration::MonteCarlo
    } else {
        opts.inner
    };
    match inner {
        InnerIntegration::MonteCarlo => {
            let half = opts.particles.div_ceil(2);
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut dirs = Vec::with_capacity(2 * half);
            for _ in 0..half {
                let xi = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
                let dir = l * &xi;
                dirs.push(-&dir);
                dirs.push(dir);
            }
            let w = 1.0 / dirs.len() as f64;
            let weights = vec![w; dirs.len()];
            (dirs, weights)
        }
        InnerIntegration::Trapezoid => {
            let per_axis = {
                let target = (opts.particles as f64).powf(1.0 / k as f64).floor() as usize;
                let mut m = target.clamp(9, 201);
                if m % 2 == 0 {
                    m += 1;
                }
                m
            };
            let span = 8.0;
            let step = 2.0 * span / (per_axis - 1) as f64;
            let axis: Vec<f64> = (0..per_axis).map(|i| -span + i as f64 * step).collect();
            let pdf = |u: f64| (-0.5 * u * u).exp();
            let axis_w: Vec<f64> = (0..per_axis)
                .map(|i| {
                    let edge = if i == 0 || i == per_axis - 1 { 0.5 } else { 1.0 };
                    edge * step * pdf(axis[i])
                })
                .collect();
            let mut dirs = Vec::new();
            let mut weights = Vec::new();
            if k == 1 {
                for i in 0..per_axis {
                    dirs.push(l * DVector::from_vec(vec![axis[i]]));
                    weights.push(axis_w[i]);
                }
            } else {
                for i in 0..per_axis {
                    for j in 0..per_axis {
                        dirs.push(l * DVector::from_vec(vec![axis[i], axis[j]]));
                        weights.push(axis_w[i] * axis_w[j]);
                    }
                }
            }
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            (dirs, weights)
        }
    }
}

/// All query-independent state of the Bayesian predictive: posterior laws,
/// variance quadrature axes, and the shared particle directions.
pub struct BayesEngine<'a> {
    model: &'a FittedModel,
    laws: &'a PosteriorLaws2Level,
    opts: BayesOptions,
    axis1: Vec<(f64, f64)>,
    axis2: Vec<(f64, f64)>,
    bounds1: (f64, f64),
    bounds2: (f64, f64),
    dirs: Vec<DVector<f64>>,
    particle_weights: Vec<f64>,
}

impl<'a> BayesEngine<'a> {
    pub fn new(
        model: &'a FittedModel,
        laws: &'a PosteriorLaws2Level,
        opts: BayesOptions,
    ) -> Result<Self> {
        opts.validate()?;
        if model.s() != 2 {
            return Err(CokrigError::InvalidParameter {
                name: "model".into(),
                reason: format!(
                    "the fully Bayesian path covers exactly two levels, the model has {}",
                    model.s()
                ),
            });
        }
        let (axis1, bounds1) = variance_axis(&laws.level1, opts.grid, opts.cutoff)?;
        let (axis2, bounds2) = variance_axis(&laws.level2, opts.grid, opts.cutoff)?;
        let k2 = laws.level2.mean.len();
        let chol = Cholesky::new(laws.level2.cov_over_sigma2.clone());
        let l_store: Option<DMatrix<f64>> = match chol {
            Some(c) => Some(c.unpack()),
            None => {
                log::warn!(
                    "level 2 coefficient covariance is numerically singular; treating the coefficients as fixed at their posterior mean"
                );
                None
            }
        };
        let (dirs, particle_weights) = particle_cloud(l_store.as_ref(), k2, &opts);
        Ok(BayesEngine {
            model,
            laws,
            opts,
            axis1,
            axis2,
            bounds1,
            bounds2,
            dirs,
            particle_weights,
        })
    }

    /// Mixture moments at fixed level variances, reusing the shared
    /// particles. Returns (mean, variance).
    fn node_moments(
        &self,
        profile: &QueryProfile,
        mean_base: f64,
        rho_base: f64,
        dots_w: &[f64],
        dots_rho: &[f64],
        sigma1_sq: f64,
        sigma2_sq: f64,
    ) -> (f64, f64) {
        let sq = sigma2_sq.max(0.0).sqrt();
        let mut mean = 0.0;
        for (j, w) in self.particle_weights.iter().enumerate() {
            mean += w * (mean_base + sq * dots_w[j]);
        }
        let mut var = 0.0;
        for (j, w) in self.particle_weights.iter().enumerate() {
            let mu = mean_base + sq * dots_w[j];
            let rho = rho_base + sq * dots_rho[j];
            let v = (rho * rho * sigma1_sq * profile.c1 + sigma2_sq * profile.c2).max(0.0);
            let d = mu - mean;
            var += w * (v + d * d);
        }
        (mean, var)
    }

    /// Full predictive mean, variance, and (optionally) density at one
    /// query point.
    pub fn predict_one(&self, x: &[f64]) -> Result<BayesPrediction> {
        let profile = query_profile(self.model, &self.laws.level1, x)?;
        let lam_mean = &self.laws.level2.mean;
        let mean_base = profile.mean(lam_mean);
        let rho_base = profile.rho(lam_mean);
        let dots_w: Vec<f64> = self.dirs.iter().map(|d| profile.w.dot(d)).collect();
        let dots_rho: Vec<f64> = self
            .dirs
            .iter()
            .map(|d| {
                let mut r = 0.0;
                for i in 0..profile.scale_feats.len() {
                    r += profile.scale_feats[i] * d[i];
                }
                r
            })
            .collect();

        let mut node_results = Vec::with_capacity(self.axis1.len() * self.axis2.len());
        for &(s1, w1) in &self.axis1 {
            for &(s2, w2) in &self.axis2 {
                let (m, v) = self.node_moments(
                    &profile, mean_base, rho_base, &dots_w, &dots_rho, s1, s2,
                );
                node_results.push((w1 * w2, m, v));
            }
        }
        let mut mean = 0.0;
        for &(w, m, _) in &node_results {
            mean += w * m;
        }
        let mut var = 0.0;
        for &(w, m, v) in &node_results {
            let d = m - mean;
            var += w * (v + d * d);
        }
        var = var.max(0.0);

        let density = if self.opts.density_points >= 2 {
            Some(self.density_grid(&profile, mean_base, rho_base, &dots_w, &dots_rho, mean, var))
        } else {
            None
        };

        Ok(BayesPrediction {
            mean,
            var,
            density,
            sigma1_bounds: self.bounds1,
            sigma2_bounds: self.bounds2,
            nodes: self.axis1.len() * self.axis2.len(),
            particles: self.dirs.len(),
            seed: self.opts.seed,
        })
    }

    /// Gaussian-mixture density on a regular grid spanning the predictive
    /// mean plus or minus ten standard deviations; the wide span keeps the
    /// long-tailed components from the upper variance nodes inside the grid.
    #[allow(clippy::too_many_arguments)]
    fn density_grid(
        &self,
        profile: &QueryProfile,
        mean_base: f64,
        rho_base: f64,
        dots_w: &[f64],
        dots_rho: &[f64],
        mean: f64,
        var: f64,
    ) -> Vec<(f64, f64)> {
        let n = self.opts.density_points;
        let sd = var.sqrt().max(1e-12 * mean.abs().max(f64::MIN_POSITIVE));
        let lo = mean - 10.0 * sd;
        let step = 20.0 * sd / (n - 1) as f64;
        let vals: Vec<f64> = (0..n).map(|i| lo + i as f64 * step).collect();
        let floor_var = 1e-12 * var.max(f64::MIN_POSITIVE);
        let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let mut pdf = vec![0.0; n];
        for &(s1, w1) in &self.axis1 {
            for &(s2, w2) in &self.axis2 {
                let wn = w1 * w2;
                let sq = s2.max(0.0).sqrt();
                for (j, &wj) in self.particle_weights.iter().enumerate() {
                    let mu = mean_base + sq * dots_w[j];
                    let rho = rho_base + sq * dots_rho[j];
                    let v = (rho * rho * s1 * profile.c1 + s2 * profile.c2).max(floor_var);
                    let inv_sd = 1.0 / v.sqrt();
                    let scale = wn * wj * norm * inv_sd;
                    for (i, &val) in vals.iter().enumerate() {
                        let z = (val - mu) * inv_sd;
                        pdf[i] += scale * (-0.5 * z * z).exp();
                    }
                }
            }
        }
        vals.into_iter().zip(pdf).collect()
    }
}

/// Mixture mean and variance at explicitly fixed level variances:
/// the level 1 coefficients integrate in closed form, the level 2
/// coefficients by `n_particles` antithetic draws. The variance is the
/// particle mean of variances plus the variance of particle means.
pub fn predictive_given_sigmas(
    model: &FittedModel,
    laws: &PosteriorLaws2Level,
    x: &[f64],
    sigma1_sq: f64,
    sigma2_sq: f64,
    n_particles: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if !(sigma1_sq >= 0.0) || !(sigma2_sq >= 0.0) {
        return Err(CokrigError::invalid(
            "level variances must be nonnegative",
        ));
    }
    let opts = BayesOptions {
        grid: 1,
        particles: n_particles.max(2),
        cutoff: 1e-5,
        inner: InnerIntegration::MonteCarlo,
        seed,
        density_points: 0,
    };
    let engine = BayesEngine::new(model, laws, opts)?;
    let profile = query_profile(model, &laws.level1, x)?;
    let lam_mean = &laws.level2.mean;
    let mean_base = profile.mean(lam_mean);
    let rho_base = profile.rho(lam_mean);
    let dots_w: Vec<f64> = engine.dirs.iter().map(|d| profile.w.dot(d)).collect();
    let dots_rho: Vec<f64> = engine
        .dirs
        .iter()
        .map(|d| {
            let mut r = 0.0;
            for i in 0..profile.scale_feats.len() {
                r += profile.scale_feats[i] * d[i];
            }
            r
        })
        .collect();
    Ok(engine.node_moments(&profile, mean_base, rho_base, &dots_w, &dots_rho, sigma1_sq, sigma2_sq))
}

/// Full Bayesian predictive at one point; see `BayesEngine`. Batch callers
/// should build the engine once through `bayes_predict`.
pub fn predictive_full(
    model: &FittedModel,
    laws: &PosteriorLaws2Level,
    x: &[f64],
    opts: &BayesOptions,
) -> Result<BayesPrediction> {
    BayesEngine::new(model, laws, opts.clone())?.predict_one(x)
}

/// Batch Bayesian prediction: the quadrature axes and particle directions
/// are built once and shared, points run in parallel in input order. The
/// result is independent of the thread count.
pub fn bayes_predict(
    model: &FittedModel,
    laws: &PosteriorLaws2Level,
    xs: &[Vec<f64>],
    opts: &BayesOptions,
) -> Result<Vec<BayesPrediction>> {
    let engine = BayesEngine::new(model, laws, opts.clone())?;
    xs.par_iter()
        .map(|x| engine.predict_one(x))
        .collect::<Result<Vec<_>>>()
}
