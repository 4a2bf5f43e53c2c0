//! Dense oracles and data generators shared by the acceptance tests.
//!
//! Everything here is written directly from the unrolled covariance of the
//! stacked observation vector, deliberately avoiding the recursive code
//! paths under test: correlations are re-evaluated from scratch, the joint
//! matrix is assembled block by block and factored densely.

#![allow(dead_code)]

use cokrig::config::RunConfig;
use cokrig::design::DesignSet;
use cokrig::estimate::FittedModel;
use cokrig::kernel::KernelFamily;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Correlation re-evaluated from the published formulas, independent of the
/// library implementation.
pub fn corr(family: KernelFamily, theta: &[f64], x: &[f64], y: &[f64]) -> f64 {
    match family {
        KernelFamily::SquaredExponential => {
            let s: f64 = (0..theta.len())
                .map(|i| {
                    let u = (x[i] - y[i]) / theta[i];
                    u * u
                })
                .sum();
            (-s).exp()
        }
        KernelFamily::Matern52 => (0..theta.len())
            .map(|i| {
                let h = (x[i] - y[i]).abs() / theta[i];
                let a = 5.0f64.sqrt() * h;
                (1.0 + a + 5.0 / 3.0 * h * h) * (-a).exp()
            })
            .product(),
    }
}

fn level_corr(model: &FittedModel, j: usize, x: &[f64], y: &[f64]) -> f64 {
    let k = &model.structures.level(j).kernel;
    corr(k.family, &k.theta, x, y)
}

/// Product of the scale factors carrying level j up to level t, evaluated
/// at x. Empty product for j = t.
fn gamma(model: &FittedModel, j: usize, t: usize, x: &[f64]) -> f64 {
    (j..t).map(|i| model.structures.scales()[i].eval(x)).product()
}

/// Index of the i-th point of level t inside the cheapest design. With the
/// canonical trailing-block ordering this identifies the physical point, so
/// two stacked rows refer to the same input exactly when their root indices
/// match.
fn root_index(model: &FittedModel, t: usize, i: usize) -> usize {
    let d = model.structures.designs();
    d.n(0) - d.n(t) + i
}

/// The joint covariance of the stacked observations, assembled entry by
/// entry from the autoregressive recursion: for levels t <= u,
/// cov(Z_t(x), Z_u(y)) = sum_{j<=t} sigma_j^2 gamma_{j,t}(x) gamma_{j,u}(y)
/// r_j(x, y), with each level's regularization nugget applied whenever both
/// rows refer to the same physical point.
pub fn dense_v(model: &FittedModel) -> DMatrix<f64> {
    let st = &model.structures;
    let d = st.designs();
    let s = st.s();
    let n_total: usize = (0..s).map(|t| d.n(t)).sum();
    let mut offsets = vec![0usize; s];
    for t in 1..s {
        offsets[t] = offsets[t - 1] + d.n(t - 1);
    }
    let mut v = DMatrix::zeros(n_total, n_total);
    for t in 0..s {
        for u in t..s {
            for i in 0..d.n(t) {
                for l in 0..d.n(u) {
                    let x = d.levels[t].point(i);
                    let y = d.levels[u].point(l);
                    let same = root_index(model, t, i) == root_index(model, u, l);
                    let mut c = 0.0;
                    for j in 0..=t {
                        let lev = st.level(j);
                        let mut r = level_corr(model, j, x, y);
                        if same {
                            r += lev.factored.nugget();
                        }
                        c += lev.sigma2 * gamma(model, j, t, x) * gamma(model, j, u, y) * r;
                    }
                    v[(offsets[t] + i, offsets[u] + l)] = c;
                    v[(offsets[u] + l, offsets[t] + i)] = c;
                }
            }
        }
    }
    v
}

/// Covariance of Z_s(x) with the stacked observations, for x off the
/// designs.
pub fn dense_t(model: &FittedModel, x: &[f64]) -> DVector<f64> {
    let st = &model.structures;
    let d = st.designs();
    let s = st.s();
    let top = s - 1;
    let n_total: usize = (0..s).map(|t| d.n(t)).sum();
    let mut t_vec = DVector::zeros(n_total);
    let mut row = 0;
    for u in 0..s {
        for l in 0..d.n(u) {
            let y = d.levels[u].point(l);
            let mut c = 0.0;
            for j in 0..=u {
                let lev = st.level(j);
                c += lev.sigma2
                    * gamma(model, j, top, x)
                    * gamma(model, j, u, y)
                    * level_corr(model, j, x, y);
            }
            t_vec[row] = c;
            row += 1;
        }
    }
    t_vec
}

/// The stacked trend matrix: block (u, k) with k <= u holds
/// gamma_{k,u}(D_u) elementwise times F_k(D_u).
pub fn dense_h(model: &FittedModel) -> DMatrix<f64> {
    let st = &model.structures;
    let d = st.designs();
    let s = st.s();
    let n_total: usize = (0..s).map(|t| d.n(t)).sum();
    let k_total: usize = (0..s).map(|t| st.level(t).trend.len()).sum();
    let mut h = DMatrix::zeros(n_total, k_total);
    let mut row = 0;
    for u in 0..s {
        for l in 0..d.n(u) {
            let y = d.levels[u].point(l);
            let mut col = 0;
            for k in 0..s {
                let p = st.level(k).trend.len();
                if k <= u {
                    let g = gamma(model, k, u, y);
                    let f = st.level(k).trend.eval(y);
                    for a in 0..p {
                        h[(row, col + a)] = g * f[a];
                    }
                }
                col += p;
            }
            row += 1;
        }
    }
    h
}

/// Trend feature vector of Z_s at x: block k is gamma_{k,s-1}(x) f_k(x).
pub fn dense_h_prime(model: &FittedModel, x: &[f64]) -> DVector<f64> {
    let st = &model.structures;
    let s = st.s();
    let top = s - 1;
    let k_total: usize = (0..s).map(|t| st.level(t).trend.len()).sum();
    let mut hp = DVector::zeros(k_total);
    let mut col = 0;
    for k in 0..s {
        let g = gamma(model, k, top, x);
        let f = st.level(k).trend.eval(x);
        for a in 0..f.len() {
            hp[col + a] = g * f[a];
        }
        col += f.len();
    }
    hp
}

pub fn dense_prior_variance(model: &FittedModel, x: &[f64]) -> f64 {
    let st = &model.structures;
    let top = st.s() - 1;
    (0..st.s())
        .map(|j| {
            let g = gamma(model, j, top, x);
            st.level(j).sigma2 * g * g
        })
        .sum()
}

/// Plug-in prediction computed entirely through the dense joint matrix.
pub fn dense_predict(model: &FittedModel, x: &[f64]) -> (f64, f64) {
    let v = dense_v(model);
    let chol = Cholesky::new(v).expect("dense joint covariance should factor");
    let h = dense_h(model);
    let r = &model.z_stacked - &h * &model.beta_full;
    let t = dense_t(model, x);
    let hp = dense_h_prime(model, x);
    let vinv_r = chol.solve(&r);
    let vinv_t = chol.solve(&t);
    let mean = hp.dot(&model.beta_full) + t.dot(&vinv_r);
    let var = dense_prior_variance(model, x) - t.dot(&vinv_t);
    (mean, var)
}

/// Dense two-level conditional-mean evaluator at explicitly supplied
/// parameters, for the nested Monte Carlo oracle. The per-level correlation
/// blocks are cached; only the variance and scale weighting changes between
/// draws.
pub struct Dense2Level {
    n1: usize,
    n2: usize,
    r11: DMatrix<f64>,
    r12: DMatrix<f64>,
    r22_low: DMatrix<f64>,
    r22_top: DMatrix<f64>,
    f1_d1: DMatrix<f64>,
    f1_d2: DMatrix<f64>,
    f2_d2: DMatrix<f64>,
    scale_feats_d2: DMatrix<f64>,
    z: DVector<f64>,
}

impl Dense2Level {
    pub fn new(model: &FittedModel) -> Self {
        assert_eq!(model.s(), 2);
        let st = &model.structures;
        let d = st.designs();
        let (n1, n2) = (d.n(0), d.n(1));
        let pts1 = d.levels[0].points();
        let pts2 = d.levels[1].points();
        let nug1 = st.level(0).factored.nugget();
        let nug2 = st.level(1).factored.nugget();
        let mut r11 = DMatrix::from_fn(n1, n1, |i, j| {
            level_corr(model, 0, &pts1[i], &pts1[j])
        });
        for i in 0..n1 {
            r11[(i, i)] += nug1;
        }
        // D2 sits at the trailing block of D1; shared points keep the
        // level 1 nugget in the cross block and the low part of the
        // level 2 block
        let mut r12 = DMatrix::from_fn(n1, n2, |i, j| {
            level_corr(model, 0, &pts1[i], &pts2[j])
        });
        let mut r22_low = DMatrix::from_fn(n2, n2, |i, j| {
            level_corr(model, 0, &pts2[i], &pts2[j])
        });
        let mut r22_top = DMatrix::from_fn(n2, n2, |i, j| {
            level_corr(model, 1, &pts2[i], &pts2[j])
        });
        for j in 0..n2 {
            r12[(n1 - n2 + j, j)] += nug1;
            r22_low[(j, j)] += nug1;
            r22_top[(j, j)] += nug2;
        }
        let f1_d1 = st.level(0).trend.matrix(pts1);
        let f1_d2 = st.level(0).trend.matrix(pts2);
        let f2_d2 = st.level(1).trend.matrix(pts2);
        let scale_feats_d2 = st.scales()[0].basis.matrix(pts2);
        Dense2Level {
            n1,
            n2,
            r11,
            r12,
            r22_low,
            r22_top,
            f1_d1,
            f1_d2,
            f2_d2,
            scale_feats_d2,
            z: model.z_stacked.clone(),
        }
    }

    /// E[Z_2(x) | data, parameters] with every parameter given.
    #[allow(clippy::too_many_arguments)]
    pub fn cond_mean(
        &self,
        model: &FittedModel,
        rho_coeffs: &DVector<f64>,
        beta1: &DVector<f64>,
        beta2: &DVector<f64>,
        s1: f64,
        s2: f64,
        x: &[f64],
    ) -> f64 {
        let (n1, n2) = (self.n1, self.n2);
        let st = &model.structures;
        let d = st.designs();
        let pts1 = d.levels[0].points();
        let pts2 = d.levels[1].points();
        let rho_d2 = &self.scale_feats_d2 * rho_coeffs;
        let rho_x = st.scales()[0].basis.eval(x).dot(rho_coeffs);

        let n = n1 + n2;
        let mut v = DMatrix::zeros(n, n);
        for i in 0..n1 {
            for j in 0..n1 {
                v[(i, j)] = s1 * self.r11[(i, j)];
            }
        }
        for i in 0..n1 {
            for j in 0..n2 {
                let c = s1 * self.r12[(i, j)] * rho_d2[j];
                v[(i, n1 + j)] = c;
                v[(n1 + j, i)] = c;
            }
        }
        for i in 0..n2 {
            for j in 0..n2 {
                v[(n1 + i, n1 + j)] = s1 * rho_d2[i] * rho_d2[j] * self.r22_low[(i, j)]
                    + s2 * self.r22_top[(i, j)];
            }
        }

        let mut c = DVector::zeros(n);
        for i in 0..n1 {
            c[i] = s1 * rho_x * level_corr(model, 0, x, &pts1[i]);
        }
        for j in 0..n2 {
            c[n1 + j] = s1 * rho_x * rho_d2[j] * level_corr(model, 0, x, &pts2[j])
                + s2 * level_corr(model, 1, x, &pts2[j]);
        }

        let mut prior = DVector::zeros(n);
        let m1 = &self.f1_d1 * beta1;
        let m2_low = &self.f1_d2 * beta1;
        let m2_trend = &self.f2_d2 * beta2;
        for i in 0..n1 {
            prior[i] = m1[i];
        }
        for j in 0..n2 {
            prior[n1 + j] = rho_d2[j] * m2_low[j] + m2_trend[j];
        }
        let prior_x = rho_x * st.level(0).trend.eval(x).dot(beta1)
            + st.level(1).trend.eval(x).dot(beta2);

        let chol = Cholesky::new(v).expect("parameterized joint covariance should factor");
        prior_x + c.dot(&chol.solve(&(&self.z - prior)))
    }
}

/// Draws one variance from the inverse gamma law with shape `alpha` and
/// scale `q_half` (density proportional to x^{-alpha-1} exp(-q_half/x)).
pub fn sample_inverse_gamma(rng: &mut ChaCha8Rng, alpha: f64, q_half: f64) -> f64 {
    use rand_distr::{Distribution, Gamma};
    let g = Gamma::new(alpha, 1.0).expect("valid gamma shape");
    q_half / g.sample(rng)
}

/// Nested random designs on [0, 1]^dim with guaranteed separation, cheapest
/// first. One dimension uses a jittered stratified grid (separation at
/// least 0.4 / n by construction); higher dimensions use rejection with the
/// given minimum distance. The upper levels are random subsets.
pub fn nested_random_designs(
    rng: &mut ChaCha8Rng,
    sizes: &[usize],
    dim: usize,
    min_sep: f64,
) -> Vec<DesignSet> {
    let n1 = sizes[0];
    let mut points: Vec<Vec<f64>>;
    if dim == 1 {
        points = (0..n1)
            .map(|i| vec![(i as f64 + 0.2 + 0.6 * rng.gen::<f64>()) / n1 as f64])
            .collect();
        points.shuffle(rng);
    } else {
        points = Vec::with_capacity(n1);
        let mut attempts = 0;
        while points.len() < n1 {
            attempts += 1;
            assert!(attempts < 200_000, "separation too demanding for the budget");
            let cand: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
            let ok = points.iter().all(|p| {
                let d2: f64 = (0..dim).map(|j| (p[j] - cand[j]).powi(2)).sum();
                d2.sqrt() >= min_sep
            });
            if ok {
                points.push(cand);
            }
        }
    }
    let mut designs = vec![DesignSet::new(points.clone()).unwrap()];
    let mut current = points;
    for &n in &sizes[1..] {
        current.shuffle(rng);
        current.truncate(n);
        designs.push(DesignSet::new(current.clone()).unwrap());
    }
    designs
}

pub struct RandomInstance {
    pub levels: Vec<DesignSet>,
    pub observations: Vec<DVector<f64>>,
    pub config: RunConfig,
}

/// A random multi-level problem exercising 1 to 3 levels, both kernel
/// families, both scale kinds and both trend widths, with designs kept well
/// separated so the dense comparison stays clear of conditioning noise.
pub fn random_instance(seed: u64) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + seed);
    let s = 1 + (seed % 3) as usize;
    let dim = 1 + ((seed / 3) % 2) as usize;
    let matern = seed % 2 == 0;

    let n_top = 6 + (rng.gen::<u64>() % 4) as usize;
    let mut sizes = vec![n_top];
    for _ in 1..s {
        let below = (sizes.last().unwrap() * 2 + (rng.gen::<u64>() % 5) as usize).min(40);
        sizes.push(below);
    }
    sizes.reverse();

    let min_sep = if dim == 1 { 0.8 / sizes[0] as f64 } else { 0.5 / (sizes[0] as f64).sqrt() };
    let levels = nested_random_designs(&mut rng, &sizes, dim, min_sep);

    // smooth random truths linked by an autoregressive chain; the fast term
    // keeps the bottom variance estimate well away from zero
    let a = 3.0 + 3.0 * rng.gen::<f64>();
    let fast = (3.6 + rng.gen::<f64>()) * sizes[0] as f64;
    let phase = rng.gen::<f64>() * std::f64::consts::TAU;
    let drift = -1.0 + 2.0 * rng.gen::<f64>();
    let z1 = move |x: &[f64]| -> f64 {
        let u: f64 = x.iter().sum::<f64>() / x.len() as f64;
        (a * u + phase).sin() + drift * u + 0.4 * (fast * x[0] + phase).sin()
    };
    let rho_fun = {
        let c0 = 0.7 + 0.6 * rng.gen::<f64>();
        let c1 = if seed % 4 < 2 { 0.0 } else { -0.4 + 0.8 * rng.gen::<f64>() };
        move |x: &[f64]| c0 + c1 * x[0]
    };
    // each refinement brings structure the level's own design cannot fully
    // resolve, so the estimated level variances stay well away from zero
    // and the joint covariance stays sanely scaled
    let bias = {
        let b0 = -0.5 + rng.gen::<f64>();
        let phi = rng.gen::<f64>() * std::f64::consts::TAU;
        let freqs: Vec<f64> = sizes.iter().map(|&n| (3.4 + rng.gen::<f64>()) * n as f64).collect();
        move |x: &[f64], t: usize| {
            b0 / (t + 1) as f64 + 0.5 * (freqs[t] * x[0] + phi + t as f64).sin()
        }
    };

    let mut observations = Vec::with_capacity(s);
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(s);
    for t in 0..s {
        let pts = levels[t].points();
        let mut z = Vec::with_capacity(pts.len());
        for p in pts {
            let v = if t == 0 {
                z1(p)
            } else {
                // the AR link needs the previous level at the same point
                let prev = values[t - 1]
                    .iter()
                    .zip(levels[t - 1].points())
                    .find(|(_, q)| q.as_slice() == p.as_slice())
                    .map(|(v, _)| *v)
                    .expect("nested by construction");
                rho_fun(p) * prev + bias(p, t)
            };
            z.push(v);
        }
        values.push(z.clone());
        observations.push(DVector::from_vec(z));
    }

    let mut config = RunConfig::default();
    config.seed = seed;
    config.kernel.family = if matern { "matern52".into() } else { "squared-exponential".into() };
    // the length scales follow the fill distance of the densest design so
    // the correlation matrices stay far from singular: the comparison below
    // probes the recursion algebra, not solver behavior at the edge of
    // conditioning
    let fill = if dim == 1 {
        1.0 / sizes[0] as f64
    } else {
        1.0 / (sizes[0] as f64).sqrt()
    };
    let theta: Vec<f64> = (0..dim)
        .map(|_| {
            if matern {
                (1.5 + 1.0 * rng.gen::<f64>()) * fill
            } else {
                (0.8 + 0.5 * rng.gen::<f64>()) * fill
            }
        })
        .collect();
    config.kernel.theta_fixed = (0..s).map(|_| theta.clone()).collect();
    config.trend.bases = (0..s)
        .map(|t| {
            if (seed + t as u64) % 2 == 0 {
                vec!["1".to_string()]
            } else {
                vec!["1".to_string(), "x1".to_string()]
            }
        })
        .collect();
    if seed % 4 >= 2 && s > 1 {
        config.scale.bases = (0..s - 1)
            .map(|_| vec!["1".to_string(), "x1".to_string()])
            .collect();
    }
    RandomInstance { levels, observations, config }
}

/// Random query points inside the unit cube, away from the corners.
pub fn random_queries(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| 0.05 + 0.9 * rng.gen::<f64>()).collect())
        .collect()
}

pub fn rmse(errors: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = errors.collect();
    (v.iter().map(|e| e * e).sum::<f64>() / v.len() as f64).sqrt()
}
