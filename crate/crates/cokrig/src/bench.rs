//! Complexity benchmark: one joint dense factorization against the
//! per-level recursive path.
//!
//! The scenario scales a two-level problem on a regular grid with n1 = 4 n2
//! and correlation length 5 / n2, so the correlation matrices stay
//! comparably conditioned across sizes. The crude path factors the full
//! (n1 + n2) covariance and back-solves; the light path factors the two
//! per-level correlation matrices and runs the recursive solves. Both are
//! checked against each other before timing. Everything here runs plain
//! single-threaded loops so the ratio reflects arithmetic, not scheduling.

use std::hint::black_box;
use std::time::Instant;

use nalgebra::{Cholesky, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::design::DesignSet;
use crate::error::{CokrigError, Result};
use crate::estimate::{fit, FittedModel};

#[derive(Clone, Copy, Debug)]
pub struct BenchRecord {
    pub n2: usize,
    pub n1: usize,
    pub t_crude_s: f64,
    pub t_light_s: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    /// Least squares slope of log t_crude against log (n1 + n2); cubic
    /// scaling shows up as a value near 3.
    pub slope: Option<f64>,
}

// scheduling noise only ever adds time, so the fastest repeat is the one
// closest to the arithmetic cost
fn fastest(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Times both solve paths on one fitted model. Returns the fastest
/// (t_crude, t_light) over `repeats` timed runs after one warmup, verifying
/// on the first run that the two paths produce the same weights.
fn time_model(model: &FittedModel, probes: &[Vec<f64>], repeats: usize) -> Result<(f64, f64)> {
    let st = &model.structures;
    let v = st.v_dense();
    let targets: Vec<DVector<f64>> = probes.iter().map(|x| st.t_vector(x)).collect();

    // correlation matrices rebuilt outside the timers; factoring them is
    // what the light path pays per fit
    let corr: Vec<nalgebra::DMatrix<f64>> = (0..st.s())
        .map(|t| {
            let pts = st.designs().levels[t].points();
            let mut r = st.level(t).kernel.cross_matrix(pts, pts);
            let nugget = st.level(t).factored.nugget();
            for i in 0..r.nrows() {
                r[(i, i)] += nugget;
            }
            r
        })
        .collect();

    // agreement guard before any timing; the scaling grid keeps twenty
    // points per correlation length, so the factors carry conditions around
    // 1e10 and two stable solvers can differ well beyond machine precision
    {
        let chol = Cholesky::new(v.clone()).ok_or(CokrigError::StillSingular {
            what: "joint covariance".into(),
            last_nugget: 0.0,
        })?;
        for u in &targets {
            let dense = chol.solve(u);
            let light = st.apply_vinv(u);
            let scale = dense.amax().max(1e-300);
            let diff = (&dense - &light).amax();
            if diff > 1e-5 * scale {
                return Err(CokrigError::invalid(format!(
                    "dense and recursive solves disagree by {diff:.3e} (scale {scale:.3e})"
                )));
            }
        }
    }

    let mut crude_times = Vec::with_capacity(repeats);
    let mut light_times = Vec::with_capacity(repeats);
    for rep in 0..=repeats {
        let v_work = v.clone();
        let t0 = Instant::now();
        let chol = Cholesky::new(v_work).expect("factorization succeeded above");
        for u in &targets {
            black_box(chol.solve(u));
        }
        let crude = t0.elapsed().as_secs_f64();

        let corr_work: Vec<_> = corr.iter().cloned().collect();
        let t1 = Instant::now();
        for r in corr_work {
            black_box(Cholesky::new(r).expect("per-level factorization"));
        }
        for u in &targets {
            black_box(st.apply_vinv(u));
        }
        let light = t1.elapsed().as_secs_f64();

        if rep > 0 {
            crude_times.push(crude);
            light_times.push(light);
        }
    }
    Ok((fastest(&crude_times), fastest(&light_times)))
}

fn two_level_instance(n2: usize) -> Result<(Vec<DesignSet>, Vec<DVector<f64>>, RunConfig)> {
    let n1 = 4 * n2;
    let grid: Vec<f64> = (0..n1).map(|i| i as f64 / (n1 - 1) as f64).collect();
    let d1: Vec<Vec<f64>> = grid.iter().map(|&x| vec![x]).collect();
    let d2: Vec<Vec<f64>> = grid[..n2].iter().map(|&x| vec![x]).collect();
    let z1 = DVector::from_iterator(n1, grid.iter().map(|&x| (12.0 * x).sin() + 0.2 * x));
    let z2 = DVector::from_iterator(
        n2,
        grid[..n2]
            .iter()
            .map(|&x| 1.3 * ((12.0 * x).sin() + 0.2 * x) + 0.5 * (3.0 * x).cos()),
    );
    let theta = 5.0 / n2 as f64;
    let mut config = RunConfig::default();
    config.kernel.family = "squared-exponential".into();
    config.kernel.theta_fixed = vec![vec![theta], vec![theta]];
    // twenty grid points per correlation length makes the correlation
    // matrices nearly singular; a fixed moderate nugget keeps the dense and
    // recursive paths comparable without touching the flop count
    config.regularization.nuggets = vec![1e-6];
    Ok((
        vec![DesignSet::new(d1)?, DesignSet::new(d2)?],
        vec![z1, z2],
        config,
    ))
}

/// Runs the two-level scaling benchmark over the given expensive-design
/// sizes. Sizes whose factorization fails are skipped with a warning.
pub fn run_complexity_bench(n2_values: &[usize], repeats: usize, _seed: u64) -> Result<BenchReport> {
    if n2_values.is_empty() {
        return Err(CokrigError::invalid("the benchmark needs at least one size"));
    }
    if repeats == 0 {
        return Err(CokrigError::invalid("the benchmark needs at least one repeat"));
    }
    let probes: Vec<Vec<f64>> = (0..10).map(|i| vec![(i as f64 + 0.5) / 10.0]).collect();
    let mut records = Vec::new();
    let mut last_skip = String::new();
    for &n2 in n2_values {
        if n2 < 4 {
            log::warn!("skipping benchmark size n2 = {n2}: too small");
            last_skip = format!("n2 = {n2}: too small");
            continue;
        }
        let (levels, obs, config) = two_level_instance(n2)?;
        let model = match fit(levels, obs, &config) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("skipping benchmark size n2 = {n2}: {e}");
                last_skip = format!("n2 = {n2}: {e}");
                continue;
            }
        };
        match time_model(&model, &probes, repeats) {
            Ok((t_crude, t_light)) => records.push(BenchRecord {
                n2,
                n1: 4 * n2,
                t_crude_s: t_crude,
                t_light_s: t_light,
                ratio: t_crude / t_light.max(1e-12),
            }),
            Err(e) => {
                log::warn!("skipping benchmark size n2 = {n2}: {e}");
                last_skip = format!("n2 = {n2}: {e}");
            }
        }
    }
    if records.is_empty() {
        return Err(CokrigError::invalid(format!(
            "every benchmark size failed; last skip: {last_skip}"
        )));
    }
    let slope = if records.len() >= 2 {
        let pts: Vec<(f64, f64)> = records
            .iter()
            .map(|r| (((r.n1 + r.n2) as f64).ln(), r.t_crude_s.max(1e-12).ln()))
            .collect();
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
    } else {
        None
    };
    Ok(BenchReport { records, slope })
}

#[derive(Clone, Copy, Debug)]
pub struct ThreeLevelBenchRecord {
    pub n: [usize; 3],
    pub t_crude_s: f64,
    pub t_light_s: f64,
    pub ratio: f64,
}

/// Optional three-level scenario at the sizes (400, 200, 50) in three
/// dimensions, with nested random uniform designs. The expected ratio for
/// these sizes is around (400 + 200 + 50)^3 / (400^3 + 200^3 + 50^3), a bit
/// under four, minus overheads.
pub fn run_three_level_bench(repeats: usize, seed: u64) -> Result<ThreeLevelBenchRecord> {
    let (n1, n2, n3) = (400, 200, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = std::f64::consts::PI;
    let mut d1: Vec<Vec<f64>> = (0..n1)
        .map(|_| (0..3).map(|_| rng.gen_range(-pi..pi)).collect())
        .collect();
    d1.shuffle(&mut rng);
    let d2: Vec<Vec<f64>> = d1[..n2].to_vec();
    let d3: Vec<Vec<f64>> = d2[..n3].to_vec();
    let g1 = |x: &[f64]| x[0].sin();
    let g2 = |x: &[f64]| g1(x) + 7.0 * x[1].sin().powi(2);
    let g3 = |x: &[f64]| g2(x) + 0.1 * x[2].powi(4) * x[0].sin();
    let z1 = DVector::from_iterator(n1, d1.iter().map(|x| g1(x)));
    let z2 = DVector::from_iterator(n2, d2.iter().map(|x| g2(x)));
    let z3 = DVector::from_iterator(n3, d3.iter().map(|x| g3(x)));
    let mut config = RunConfig::default();
    config.kernel.family = "matern52".into();
    config.kernel.theta_fixed = vec![vec![2.0; 3], vec![2.0; 3], vec![2.0; 3]];
    let levels = vec![
        DesignSet::new(d1.clone())?,
        DesignSet::new(d2)?,
        DesignSet::new(d3)?,
    ];
    let model = fit(levels, vec![z1, z2, z3], &config)?;
    let probes: Vec<Vec<f64>> = (0..10)
        .map(|_| (0..3).map(|_| rng.gen_range(-pi..pi)).collect())
        .collect();
    let (t_crude, t_light) = time_model(&model, &probes, repeats)?;
    Ok(ThreeLevelBenchRecord {
        n: [n1, n2, n3],
        t_crude_s: t_crude,
        t_light_s: t_light,
        ratio: t_crude / t_light.max(1e-12),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sizes_produce_consistent_records() {
        let report = run_complexity_bench(&[12, 24], 1, 0).unwrap();
        assert_eq!(report.records.len(), 2);
        for r in &report.records {
            assert_eq!(r.n1, 4 * r.n2);
            assert!(r.t_crude_s > 0.0);
            assert!(r.t_light_s > 0.0);
        }
        assert!(report.slope.is_some());
    }

    #[test]
    fn rejects_empty_input() {
        assert!(run_complexity_bench(&[], 3, 0).is_err());
        assert!(run_complexity_bench(&[16], 0, 0).is_err());
    }
}
