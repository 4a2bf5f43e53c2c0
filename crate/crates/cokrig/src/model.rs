//! Joint Gaussian structures over all fidelity levels.
//!
//! An s-level model couples the levels through first order autoregression:
//! the process at level t+1 equals the level t process times an input
//! dependent scale factor, plus an independent adjustment process. With
//! nested designs the joint covariance over all observations never has to be
//! factorized as one dense matrix: every product with its inverse reduces to
//! per-level solves against the individual correlation matrices, which is
//! what [`JointStructures::apply_vinv`] and [`JointStructures::weights`]
//! implement. The dense assembly [`JointStructures::v_dense`] exists for
//! tests and for the complexity benchmark, not for the production path.

use nalgebra::{DMatrix, DVector};

use crate::basis::{Basis, FittedScale};
use crate::design::SortedDesigns;
use crate::kernel::{FactoredCorrelation, Kernel};

/// Per-level pieces: kernel with fitted length scales, factorized
/// correlation over the level's design, trend basis and variance.
#[derive(Clone, Debug)]
pub struct LevelStructure {
    pub kernel: Kernel,
    pub factored: FactoredCorrelation,
    pub trend: Basis,
    pub sigma2: f64,
}

#[derive(Clone, Debug)]
pub struct JointStructures {
    designs: SortedDesigns,
    levels: Vec<LevelStructure>,
    scales: Vec<FittedScale>,
    /// scale_on_design[i][l] = scale factor i evaluated on design level l,
    /// stored for l > i (levels below never need it).
    scale_on_design: Vec<Vec<DVector<f64>>>,
}

impl JointStructures {
    pub fn new(
        designs: SortedDesigns,
        levels: Vec<LevelStructure>,
        scales: Vec<FittedScale>,
    ) -> Self {
        let s = designs.s();
        assert_eq!(levels.len(), s);
        assert_eq!(scales.len(), s - 1);
        for t in 0..s {
            assert_eq!(levels[t].factored.n(), designs.n(t));
            assert_eq!(levels[t].kernel.dim(), designs.dim());
        }
        let scale_on_design = scales
            .iter()
            .enumerate()
            .map(|(i, sc)| {
                (i + 1..s)
                    .map(|l| sc.eval_points(designs.levels[l].points()))
                    .collect()
            })
            .collect();
        JointStructures {
            designs,
            levels,
            scales,
            scale_on_design,
        }
    }

    pub fn s(&self) -> usize {
        self.designs.s()
    }

    pub fn dim(&self) -> usize {
        self.designs.dim()
    }

    pub fn designs(&self) -> &SortedDesigns {
        &self.designs
    }

    pub fn level(&self, t: usize) -> &LevelStructure {
        &self.levels[t]
    }

    pub fn levels(&self) -> &[LevelStructure] {
        &self.levels
    }

    pub fn scales(&self) -> &[FittedScale] {
        &self.scales
    }

    /// Scale factor i evaluated on design level l (l > i).
    pub fn scale_on(&self, i: usize, l: usize) -> &DVector<f64> {
        &self.scale_on_design[i][l - i - 1]
    }

    /// Rescales one level variance in place. Useful for sensitivity checks;
    /// the predictive mean does not depend on the level variances at all.
    pub fn scale_sigma2(&mut self, t: usize, factor: f64) {
        self.levels[t].sigma2 *= factor;
    }

    /// Total trend dimension over all levels.
    pub fn k_total(&self) -> usize {
        self.levels.iter().map(|l| l.trend.len()).sum()
    }

    /// Product of the scale factors carrying level j up to level t at x.
    pub fn gamma_at(&self, j: usize, t: usize, x: &[f64]) -> f64 {
        (j..t).map(|i| self.scales[i].eval(x)).product()
    }

    /// Same product evaluated on a list of points.
    fn gamma_on(&self, j: usize, t: usize, points: &[Vec<f64>]) -> DVector<f64> {
        let mut g = DVector::from_element(points.len(), 1.0);
        for i in j..t {
            g.component_mul_assign(&self.scales[i].eval_points(points));
        }
        g
    }

    /// Joint trend matrix H: block row t holds the regressors of all levels
    /// up to t, each carried upward by the accumulated scale factors.
    pub fn h_matrix(&self) -> DMatrix<f64> {
        let s = self.s();
        let n_total = self.designs.n_total();
        let k_total = self.k_total();
        let mut h = DMatrix::zeros(n_total, k_total);
        let mut col_off = 0;
        for k in 0..s {
            let pk = self.levels[k].trend.len();
            for j in k..s {
                let row_off = self.designs.offset(j);
                let pts = self.designs.levels[j].points();
                let f = self.levels[k].trend.matrix(pts);
                let g = self.gamma_on(k, j, pts);
                for c in 0..pk {
                    for r in 0..pts.len() {
                        h[(row_off + r, col_off + c)] = g[r] * f[(r, c)];
                    }
                }
            }
            col_off += pk;
        }
        h
    }

    /// Trend feature vector of the top level process at x: the level k block
    /// is gamma(k -> top) f_k(x).
    pub fn h_prime(&self, x: &[f64]) -> DVector<f64> {
        let s = self.s();
        let mut out = DVector::zeros(self.k_total());
        let mut off = 0;
        for k in 0..s {
            let f = self.levels[k].trend.eval(x);
            let g = self.gamma_at(k, s - 1, x);
            for c in 0..f.len() {
                out[off + c] = g * f[c];
            }
            off += f.len();
        }
        out
    }

    /// Prior variance of the top level process at x.
    pub fn prior_variance(&self, x: &[f64]) -> f64 {
        let s = self.s();
        (0..s)
            .map(|j| {
                let g = self.gamma_at(j, s - 1, x);
                self.levels[j].sigma2 * g * g
            })
            .sum()
    }

    /// Covariance vector between the top level process at x and every
    /// observation, assembled block by block through the level recursion.
    pub fn t_vector(&self, x: &[f64]) -> DVector<f64> {
        let s = self.s();
        let mut out = DVector::zeros(self.designs.n_total());
        for l in 0..s {
            let pts = self.designs.levels[l].points();
            let mut acc = self.levels[0].kernel.cross_vector(x, pts);
            acc *= self.gamma_at(0, s - 1, x) * self.levels[0].sigma2;
            for t in 1..=l {
                let rho = self.scale_on(t - 1, l);
                let mut term = self.levels[t].kernel.cross_vector(x, pts);
                term *= self.gamma_at(t, s - 1, x) * self.levels[t].sigma2;
                acc.component_mul_assign(rho);
                acc += term;
            }
            let off = self.designs.offset(l);
            for i in 0..pts.len() {
                out[off + i] = acc[i];
            }
        }
        out
    }

    /// Kriging weight vector w(x) = t(x)^T V^-1 computed without ever
    /// touching V: one correlation solve per level plus scatter updates on
    /// the shared trailing blocks. The result does not depend on the level
    /// variances, which cancel exactly.
    pub fn weights(&self, x: &[f64]) -> DVector<f64> {
        let s = self.s();
        let a0 = self.levels[0]
            .factored
            .solve(&self.levels[0].kernel.cross_vector(x, self.designs.levels[0].points()));
        let mut w: Vec<f64> = a0.iter().copied().collect();
        for t in 1..s {
            let rho_x = self.scales[t - 1].eval(x);
            for v in w.iter_mut() {
                *v *= rho_x;
            }
            let a = self.levels[t]
                .factored
                .solve(&self.levels[t].kernel.cross_vector(x, self.designs.levels[t].points()));
            let rho_d = self.scale_on(t - 1, t);
            let prev_len = w.len();
            let n_t = self.designs.n(t);
            // the trailing n_t entries of level t-1's block overlap design t
            let tail = prev_len - n_t;
            for i in 0..n_t {
                w[tail + i] -= rho_d[i] * a[i];
            }
            w.extend(a.iter().copied());
        }
        DVector::from_vec(w)
    }

    /// Applies V^-1 to a stacked vector using the per-level factorizations.
    pub fn apply_vinv(&self, u: &DVector<f64>) -> DVector<f64> {
        let s = self.s();
        assert_eq!(u.len(), self.designs.n_total());
        let mut out = DVector::zeros(u.len());
        for t in 0..s {
            let off = self.designs.offset(t);
            let n_t = self.designs.n(t);
            let mut g = DVector::from_fn(n_t, |i, _| u[off + i]);
            if t > 0 {
                let rho = self.scale_on(t - 1, t);
                let prev_off = self.designs.offset(t - 1);
                let tail = prev_off + self.designs.n(t - 1) - n_t;
                for i in 0..n_t {
                    g[i] -= rho[i] * u[tail + i];
                }
            }
            let mut v = self.levels[t].factored.solve(&g);
            v /= self.levels[t].sigma2;
            for i in 0..n_t {
                out[off + i] += v[i];
            }
            if t > 0 {
                let rho = self.scale_on(t - 1, t);
                let prev_off = self.designs.offset(t - 1);
                let tail = prev_off + self.designs.n(t - 1) - n_t;
                for i in 0..n_t {
                    out[tail + i] -= rho[i] * v[i];
                }
            }
        }
        out
    }

    /// Dense joint covariance matrix. Cubic in the total number of points;
    /// only tests and the benchmark baseline should call this.
    pub fn v_dense(&self) -> DMatrix<f64> {
        let s = self.s();
        let n_total = self.designs.n_total();
        let mut v = DMatrix::zeros(n_total, n_total);
        for t in 0..s {
            for tp in t..s {
                let dt = self.designs.levels[t].points();
                let dtp = self.designs.levels[tp].points();
                let mut block = DMatrix::zeros(dt.len(), dtp.len());
                for j in 0..=t {
                    let lvl = &self.levels[j];
                    let gt = self.gamma_on(j, t, dt);
                    let gtp = self.gamma_on(j, tp, dtp);
                    let r = lvl.kernel.cross_matrix(dt, dtp);
                    for a in 0..dt.len() {
                        for b in 0..dtp.len() {
                            block[(a, b)] += lvl.sigma2 * gt[a] * gtp[b] * r[(a, b)];
                        }
                    }
                    // shared points carry the nugget of level j's factorization
                    let nug = lvl.factored.nugget();
                    if nug > 0.0 {
                        let tail = dt.len() - dtp.len();
                        for b in 0..dtp.len() {
                            block[(tail + b, b)] += lvl.sigma2 * gt[tail + b] * gtp[b] * nug;
                        }
                    }
                }
                let ro = self.designs.offset(t);
                let co = self.designs.offset(tp);
                for a in 0..dt.len() {
                    for b in 0..dtp.len() {
                        v[(ro + a, co + b)] = block[(a, b)];
                        v[(co + b, ro + a)] = block[(a, b)];
                    }
                }
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{sort_nested, DesignSet};
    use crate::kernel::{factor_spd, KernelFamily, RegularizationPolicy};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn toy() -> JointStructures {
        let d1 = DesignSet::new((0..7).map(|i| vec![i as f64 / 6.0]).collect()).unwrap();
        let d2 = DesignSet::new(vec![vec![0.0], vec![0.5], vec![1.0]]).unwrap();
        let z1 = DVector::from_fn(7, |i, _| (i as f64).sin());
        let z2 = DVector::from_fn(3, |i, _| i as f64);
        let (sorted, _z) = sort_nested(vec![d1, d2], vec![z1, z2], 1e-9).unwrap();
        let mut levels = Vec::new();
        for (t, sig) in [(0usize, 2.0), (1usize, 0.5)] {
            let kernel = Kernel::new(KernelFamily::Matern52, vec![0.4 + 0.3 * t as f64]).unwrap();
            let r = kernel.cross_matrix(sorted.levels[t].points(), sorted.levels[t].points());
            let factored =
                factor_spd(&r, &RegularizationPolicy::default(), 1.0, "test").unwrap();
            levels.push(LevelStructure {
                kernel,
                factored,
                trend: Basis::constant(),
                sigma2: sig,
            });
        }
        let scale = FittedScale::new(
            Basis::from_tokens(&["1".into(), "x1".into()], 1).unwrap(),
            DVector::from_vec(vec![1.3, -0.4]),
        );
        JointStructures::new(sorted, levels, vec![scale])
    }

    #[test]
    fn apply_vinv_inverts_the_dense_matrix() {
        let js = toy();
        let v = js.v_dense();
        let u = DVector::from_fn(v.nrows(), |i, _| ((i * 7 + 3) % 5) as f64 - 2.0);
        let x = js.apply_vinv(&u);
        let back = &v * &x;
        for i in 0..u.len() {
            assert_relative_eq!(back[i], u[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn weights_match_dense_solution() {
        let js = toy();
        let v = js.v_dense();
        let x = [0.37];
        let w = js.weights(&x);
        let t = js.t_vector(&x);
        let dense_w = v
            .clone()
            .cholesky()
            .expect("dense V factorizes")
            .solve(&t);
        for i in 0..w.len() {
            assert_relative_eq!(w[i], dense_w[i], epsilon = 1e-9, max_relative = 1e-7);
        }
    }

    #[test]
    fn weights_do_not_depend_on_variances() {
        let mut js = toy();
        let x = [0.81];
        let w1 = js.weights(&x);
        js.levels[0].sigma2 *= 1e6;
        js.levels[1].sigma2 *= 1e-6;
        let w2 = js.weights(&x);
        assert_eq!(w1, w2);
    }

    #[test]
    fn h_matrix_blocks_carry_scale_products() {
        let js = toy();
        let h = js.h_matrix();
        assert_eq!(h.nrows(), 10);
        assert_eq!(h.ncols(), 2);
        // level 1 rows: [1, 0]
        assert_eq!(h[(0, 0)], 1.0);
        assert_eq!(h[(0, 1)], 0.0);
        // level 2 rows: [rho(x), 1]
        let pts = js.designs().levels[1].points().to_vec();
        for (i, p) in pts.iter().enumerate() {
            let expect = 1.3 - 0.4 * p[0];
            assert_relative_eq!(h[(7 + i, 0)], expect, max_relative = 1e-14);
            assert_eq!(h[(7 + i, 1)], 1.0);
        }
    }

    #[test]
    fn h_prime_and_prior_variance_at_a_point() {
        let js = toy();
        let x = [0.25];
        let rho = 1.3 - 0.4 * 0.25;
        let hp = js.h_prime(&x);
        assert_relative_eq!(hp[0], rho, max_relative = 1e-14);
        assert_relative_eq!(hp[1], 1.0, max_relative = 1e-14);
        assert_relative_eq!(
            js.prior_variance(&x),
            2.0 * rho * rho + 0.5,
            max_relative = 1e-14
        );
    }

    #[test]
    fn t_vector_matches_covariance_definition() {
        let js = toy();
        let x = [0.62];
        let t = js.t_vector(&x);
        // direct: cov(Z_top(x), Z_t(u)) = sum_{j<=t} sig_j^2 gamma_j^top(x)
        //         gamma_j^t(u) r_j(x,u)
        let mut direct = Vec::new();
        for t_lvl in 0..2 {
            for u in js.designs().levels[t_lvl].points() {
                let mut c = 0.0;
                for j in 0..=t_lvl {
                    let gx = js.gamma_at(j, 1, &x);
                    let gu = js.gamma_at(j, t_lvl, u);
                    c += js.level(j).sigma2 * gx * gu * js.level(j).kernel.eval(&x, u);
                }
                direct.push(c);
            }
        }
        for i in 0..t.len() {
            assert_relative_eq!(t[i], direct[i], max_relative = 1e-12);
        }
    }
}
