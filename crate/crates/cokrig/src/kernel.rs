//! Stationary correlation kernels and regularized Cholesky factorization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{CokrigError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// r(d) = exp(-sum_i (d_i / theta_i)^2)
    SquaredExponential,
    /// Tensor product of one-dimensional Matern 5/2 correlations.
    Matern52,
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelFamily::SquaredExponential => write!(f, "squared-exponential"),
            KernelFamily::Matern52 => write!(f, "matern52"),
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = CokrigError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "squared-exponential" | "gaussian" | "se" => Ok(KernelFamily::SquaredExponential),
            "matern52" | "matern-5-2" | "matern" => Ok(KernelFamily::Matern52),
            other => Err(CokrigError::InvalidParameter {
                name: "kernel.family".into(),
                reason: format!(
                    "unknown family `{other}` (expected squared-exponential or matern52)"
                ),
            }),
        }
    }
}

/// Anisotropic stationary correlation with one length scale per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    pub theta: Vec<f64>,
}

impl Kernel {
    pub fn new(family: KernelFamily, theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(CokrigError::InvalidParameter {
                name: "theta".into(),
                reason: "must have at least one length scale".into(),
            });
        }
        for (i, t) in theta.iter().enumerate() {
            if !t.is_finite() || *t <= 0.0 {
                return Err(CokrigError::InvalidParameter {
                    name: format!("theta[{i}]"),
                    reason: format!("length scales must be finite and positive, got {t}"),
                });
            }
        }
        Ok(Kernel { family, theta })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Correlation between two points.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.theta.len());
        debug_assert_eq!(y.len(), self.theta.len());
        match self.family {
            KernelFamily::SquaredExponential => {
                let mut s = 0.0;
                for i in 0..self.theta.len() {
                    let u = (x[i] - y[i]) / self.theta[i];
                    s += u * u;
                }
                (-s).exp()
            }
            KernelFamily::Matern52 => {
                let mut p = 1.0;
                for i in 0..self.theta.len() {
                    let h = (x[i] - y[i]).abs() / self.theta[i];
                    let a = 5.0f64.sqrt() * h;
                    p *= (1.0 + a + 5.0 * h * h / 3.0) * (-a).exp();
                }
                p
            }
        }
    }

    /// Correlation matrix between two point sets, `a` indexing rows.
    pub fn cross_matrix(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval(&a[i], &b[j]))
    }

    /// Correlation vector r(x, points).
    pub fn cross_vector(&self, x: &[f64], points: &[Vec<f64>]) -> DVector<f64> {
        DVector::from_fn(points.len(), |i, _| self.eval(x, &points[i]))
    }
}

/// Nugget ladder and conditioning bound used when factorizing correlation
/// matrices. The ladder is tried in order; a level is accepted once the
/// Cholesky factorization succeeds and the 1-norm condition estimate stays
/// below `max_condition`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizationPolicy {
    pub nuggets: Vec<f64>,
    pub max_condition: f64,
}

impl Default for RegularizationPolicy {
    fn default() -> Self {
        RegularizationPolicy {
            nuggets: vec![0.0, 1e-10, 1e-8, 1e-6],
            max_condition: 1e12,
        }
    }
}

/// Cholesky factorization of a correlation matrix plus the nugget that made
/// it numerically positive definite. The inverse is never formed; solves go
/// through the stored factor.
#[derive(Clone, Debug)]
pub struct FactoredCorrelation {
    chol: Cholesky<f64, Dyn>,
    n: usize,
    nugget: f64,
    log_det: f64,
    condition_estimate: f64,
}

impl FactoredCorrelation {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    /// log det(R + nugget I) from the Cholesky diagonal.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    /// Solves (R + nugget I) u = v.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    pub fn solve_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(m)
    }

    /// Solves L u = v with L the lower Cholesky factor.
    pub fn solve_lower(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut u = v.clone();
        let ok = self.chol.l_dirty().solve_lower_triangular_mut(&mut u);
        debug_assert!(ok);
        u
    }

    pub fn solve_lower_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut u = m.clone();
        let ok = self.chol.l_dirty().solve_lower_triangular_mut(&mut u);
        debug_assert!(ok);
        u
    }
}

/// Factorizes a symmetric positive definite matrix, walking the nugget
/// ladder until the factorization succeeds and the conditioning estimate
/// (1-norm of the matrix over the squared smallest Cholesky pivot) is
/// acceptable. `what` names the matrix in warnings and errors. The nugget is
/// scaled by `diag_scale`, which is 1 for correlation matrices.
pub fn factor_spd(
    m: &DMatrix<f64>,
    policy: &RegularizationPolicy,
    diag_scale: f64,
    what: &str,
) -> Result<FactoredCorrelation> {
    assert_eq!(m.nrows(), m.ncols());
    let n = m.nrows();
    let norm1 = one_norm(m);
    let mut last = 0.0;
    for &nugget in &policy.nuggets {
        last = nugget;
        let mut cand = m.clone();
        for i in 0..n {
            cand[(i, i)] += nugget * diag_scale;
        }
        let Some(chol) = Cholesky::new(cand) else {
            continue;
        };
        let min_pivot = (0..n)
            .map(|i| chol.l_dirty()[(i, i)])
            .fold(f64::INFINITY, f64::min);
        let condition_estimate = if min_pivot > 0.0 {
            (norm1 + nugget * diag_scale) / (min_pivot * min_pivot)
        } else {
            f64::INFINITY
        };
        if condition_estimate > policy.max_condition {
            continue;
        }
        if nugget > 0.0 {
            // routine at the small rungs; the last rung means the matrix was
            // genuinely close to singular, which deserves attention
            if nugget >= *policy.nuggets.last().unwrap_or(&f64::INFINITY) {
                log::warn!("{what}: added nugget {nugget:.1e} to keep the factorization well conditioned");
            } else {
                log::debug!("{what}: added nugget {nugget:.1e} to keep the factorization well conditioned");
            }
        }
        let log_det = 2.0 * (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
        return Ok(FactoredCorrelation {
            chol,
            n,
            nugget,
            log_det,
            condition_estimate,
        });
    }
    Err(CokrigError::StillSingular {
        what: what.to_string(),
        last_nugget: last,
    })
}

/// Factorizes with a fixed nugget recorded in a model file, bypassing the
/// ladder. Fails if the matrix is not positive definite at that nugget.
pub fn factor_spd_fixed(
    m: &DMatrix<f64>,
    nugget: f64,
    diag_scale: f64,
    what: &str,
) -> Result<FactoredCorrelation> {
    let n = m.nrows();
    let norm1 = one_norm(m);
    let mut cand = m.clone();
    for i in 0..n {
        cand[(i, i)] += nugget * diag_scale;
    }
    let chol = Cholesky::new(cand).ok_or_else(|| CokrigError::StillSingular {
        what: what.to_string(),
        last_nugget: nugget,
    })?;
    let min_pivot = (0..n)
        .map(|i| chol.l_dirty()[(i, i)])
        .fold(f64::INFINITY, f64::min);
    let log_det = 2.0 * (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
    Ok(FactoredCorrelation {
        chol,
        n,
        nugget,
        log_det,
        condition_estimate: (norm1 + nugget * diag_scale) / (min_pivot * min_pivot),
    })
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        let s = m.column(j).iter().map(|v| v.abs()).sum::<f64>();
        best = best.max(s);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn squared_exponential_matches_closed_form() {
        let k = Kernel::new(KernelFamily::SquaredExponential, vec![0.5, 2.0]).unwrap();
        // exp(-( (0.25/0.5)^2 + (1.0/2.0)^2 )) = exp(-0.5)
        let v = k.eval(&[1.0, 3.0], &[0.75, 2.0]);
        assert_relative_eq!(v, (-0.5f64).exp(), max_relative = 1e-15);
        // at distance theta in one coordinate the correlation is exp(-1)
        let k1 = Kernel::new(KernelFamily::SquaredExponential, vec![0.3]).unwrap();
        assert_relative_eq!(k1.eval(&[0.0], &[0.3]), (-1.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn matern52_reference_value() {
        // (1 + sqrt(5) + 5/3) exp(-sqrt(5)) at |d| = theta = 1
        let k = Kernel::new(KernelFamily::Matern52, vec![1.0]).unwrap();
        assert_relative_eq!(
            k.eval(&[0.0], &[1.0]),
            0.5239941088318203,
            max_relative = 1e-14
        );
    }

    #[test]
    fn matern52_tensorizes() {
        let k = Kernel::new(KernelFamily::Matern52, vec![1.0, 2.0]).unwrap();
        let k1 = Kernel::new(KernelFamily::Matern52, vec![1.0]).unwrap();
        let k2 = Kernel::new(KernelFamily::Matern52, vec![2.0]).unwrap();
        let v = k.eval(&[0.0, 0.0], &[0.7, 1.1]);
        assert_relative_eq!(
            v,
            k1.eval(&[0.0], &[0.7]) * k2.eval(&[0.0], &[1.1]),
            max_relative = 1e-14
        );
    }

    #[test]
    fn kernels_are_symmetric_with_unit_diagonal() {
        let pts = vec![
            vec![0.1, -0.4],
            vec![0.9, 0.2],
            vec![-1.3, 2.0],
            vec![0.0, 0.0],
        ];
        for family in [KernelFamily::SquaredExponential, KernelFamily::Matern52] {
            let k = Kernel::new(family, vec![0.7, 1.3]).unwrap();
            let r = k.cross_matrix(&pts, &pts);
            for i in 0..pts.len() {
                assert_relative_eq!(r[(i, i)], 1.0, max_relative = 1e-15);
                for j in 0..pts.len() {
                    assert_relative_eq!(r[(i, j)], r[(j, i)], max_relative = 1e-15);
                    assert!(r[(i, j)] > 0.0 && r[(i, j)] <= 1.0);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_length_scales() {
        assert!(Kernel::new(KernelFamily::Matern52, vec![]).is_err());
        assert!(Kernel::new(KernelFamily::Matern52, vec![0.0]).is_err());
        assert!(Kernel::new(KernelFamily::Matern52, vec![-1.0]).is_err());
        assert!(Kernel::new(KernelFamily::Matern52, vec![f64::NAN]).is_err());
    }

    #[test]
    fn well_conditioned_matrix_needs_no_nugget() {
        let k = Kernel::new(KernelFamily::Matern52, vec![0.4]).unwrap();
        let pts: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let r = k.cross_matrix(&pts, &pts);
        let f = factor_spd(&r, &RegularizationPolicy::default(), 1.0, "test").unwrap();
        assert_eq!(f.nugget(), 0.0);
        // identity-ish matrix: log det close to 0
        assert!(f.log_det().abs() < 1.0);
        // solve against a known right hand side
        let v = DVector::from_element(8, 1.0);
        let u = f.solve(&v);
        let back = &r * &u;
        for i in 0..8 {
            assert_relative_eq!(back[i], 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn duplicate_points_walk_the_ladder() {
        let k = Kernel::new(KernelFamily::SquaredExponential, vec![1.0]).unwrap();
        let pts = vec![vec![0.0], vec![0.0], vec![1.0]];
        let r = k.cross_matrix(&pts, &pts);
        let f = factor_spd(&r, &RegularizationPolicy::default(), 1.0, "test");
        match f {
            Ok(f) => assert!(f.nugget() > 0.0),
            Err(CokrigError::StillSingular { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn ladder_exhaustion_reports_still_singular() {
        // exactly singular and the policy bans nuggets
        let k = Kernel::new(KernelFamily::SquaredExponential, vec![1.0]).unwrap();
        let pts = vec![vec![0.0], vec![0.0]];
        let r = k.cross_matrix(&pts, &pts);
        let policy = RegularizationPolicy {
            nuggets: vec![0.0],
            max_condition: 1e12,
        };
        assert!(matches!(
            factor_spd(&r, &policy, 1.0, "test"),
            Err(CokrigError::StillSingular { .. })
        ));
    }

    #[test]
    fn log_det_matches_direct_determinant() {
        let k = Kernel::new(KernelFamily::Matern52, vec![0.9]).unwrap();
        let pts = vec![vec![0.0], vec![0.35], vec![1.1], vec![2.2]];
        let r = k.cross_matrix(&pts, &pts);
        let f = factor_spd(&r, &RegularizationPolicy::default(), 1.0, "test").unwrap();
        assert_relative_eq!(f.log_det(), r.determinant().ln(), max_relative = 1e-9);
    }

    #[test]
    fn solve_lower_is_half_a_solve() {
        let k = Kernel::new(KernelFamily::Matern52, vec![0.9]).unwrap();
        let pts = vec![vec![0.0], vec![0.4], vec![1.0]];
        let r = k.cross_matrix(&pts, &pts);
        let f = factor_spd(&r, &RegularizationPolicy::default(), 1.0, "test").unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let half = f.solve_lower(&v);
        // ||L^-1 v||^2 = v^T R^-1 v
        let full = f.solve(&v);
        assert_relative_eq!(half.norm_squared(), v.dot(&full), max_relative = 1e-12);
    }
}
