//! Built-in demonstration problems with known truth.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::design::DesignSet;
use crate::error::{CokrigError, Result};

/// The classic one-dimensional two-level pair: an expensive oscillating
/// function and a shifted, scaled cheap version.
pub fn forrester_expensive(x: f64) -> f64 {
    let a = 6.0 * x - 2.0;
    a * a * (12.0 * x - 4.0).sin()
}

pub fn forrester_cheap(x: f64) -> f64 {
    0.5 * forrester_expensive(x) + 10.0 * (x - 0.5) - 5.0
}

/// Variant with an added high-frequency component on the expensive level
/// only; the cheap level is unchanged.
pub fn forrester_highfreq_expensive(x: f64) -> f64 {
    forrester_expensive(x) + (10.0 * (5.0 * x).cos()).sin()
}

pub fn ishigami_level1(x: &[f64]) -> f64 {
    x[0].sin()
}

pub fn ishigami_level2(x: &[f64]) -> f64 {
    ishigami_level1(x) + 7.0 * x[1].sin().powi(2)
}

pub fn ishigami_level3(x: &[f64]) -> f64 {
    ishigami_level2(x) + 0.1 * x[2].powi(4) * x[0].sin()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DemoProblem {
    /// Two levels, 11 + 4 points, fixed correlation lengths (0.25, 0.8).
    Forrester,
    /// Same designs with the high-frequency expensive level and correlation
    /// lengths (0.25, 0.07).
    ForresterHighFreq,
    /// Three levels in three dimensions, nested random designs of sizes
    /// 400 / 200 / 50 on [-pi, pi]^3, optimized correlation lengths.
    Ishigami,
}

impl std::str::FromStr for DemoProblem {
    type Err = CokrigError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forrester" => Ok(DemoProblem::Forrester),
            "forrester-highfreq" | "forrester2" => Ok(DemoProblem::ForresterHighFreq),
            "ishigami" => Ok(DemoProblem::Ishigami),
            other => Err(CokrigError::InvalidParameter {
                name: "demo problem".into(),
                reason: format!(
                    "unknown problem {other:?}; use forrester, forrester-highfreq or ishigami"
                ),
            }),
        }
    }
}

/// A generated instance: nested designs, observations, a matching run
/// configuration, and a test set with known truth.
pub struct DemoData {
    pub name: &'static str,
    pub levels: Vec<DesignSet>,
    pub observations: Vec<DVector<f64>>,
    pub config: RunConfig,
    pub test_inputs: Vec<Vec<f64>>,
    pub test_truth: Vec<f64>,
}

fn forrester_designs() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d1: Vec<Vec<f64>> = (0..11).map(|i| vec![i as f64 / 10.0]).collect();
    let d2: Vec<Vec<f64>> = [0.0, 0.4, 0.6, 1.0].iter().map(|&x| vec![x]).collect();
    (d1, d2)
}

/// Generates one of the built-in problems. The Forrester pair is fully
/// deterministic; the Ishigami instance draws its designs and test set from
/// the seed.
pub fn generate(problem: DemoProblem, seed: u64) -> Result<DemoData> {
    match problem {
        DemoProblem::Forrester => {
            let (d1, d2) = forrester_designs();
            let z1 = DVector::from_iterator(d1.len(), d1.iter().map(|x| forrester_cheap(x[0])));
            let z2 = DVector::from_iterator(d2.len(), d2.iter().map(|x| forrester_expensive(x[0])));
            let mut config = RunConfig::default();
            config.seed = seed;
            config.kernel.family = "squared-exponential".into();
            config.kernel.theta_fixed = vec![vec![0.25], vec![0.8]];
            config.trend.bases = vec![vec!["1".into()], vec!["1".into(), "x1".into()]];
            let test_inputs: Vec<Vec<f64>> = (0..101).map(|i| vec![i as f64 / 100.0]).collect();
            let test_truth = test_inputs.iter().map(|x| forrester_expensive(x[0])).collect();
            Ok(DemoData {
                name: "forrester",
                levels: vec![DesignSet::new(d1)?, DesignSet::new(d2)?],
                observations: vec![z1, z2],
                config,
                test_inputs,
                test_truth,
            })
        }
        DemoProblem::ForresterHighFreq => {
            let (d1, d2) = forrester_designs();
            let z1 = DVector::from_iterator(d1.len(), d1.iter().map(|x| forrester_cheap(x[0])));
            let z2 = DVector::from_iterator(
                d2.len(),
                d2.iter().map(|x| forrester_highfreq_expensive(x[0])),
            );
            let mut config = RunConfig::default();
            config.seed = seed;
            config.kernel.family = "squared-exponential".into();
            config.kernel.theta_fixed = vec![vec![0.25], vec![0.07]];
            config.trend.bases = vec![vec!["1".into()], vec!["1".into(), "x1".into()]];
            let test_inputs: Vec<Vec<f64>> = (0..101).map(|i| vec![i as f64 / 100.0]).collect();
            let test_truth = test_inputs
                .iter()
                .map(|x| forrester_highfreq_expensive(x[0]))
                .collect();
            Ok(DemoData {
                name: "forrester-highfreq",
                levels: vec![DesignSet::new(d1)?, DesignSet::new(d2)?],
                observations: vec![z1, z2],
                config,
                test_inputs,
                test_truth,
            })
        }
        DemoProblem::Ishigami => {
            let (n1, n2, n3, n_test) = (400, 200, 50, 30_000);
            let pi = std::f64::consts::PI;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            fn draw(rng: &mut ChaCha8Rng, n: usize, pi: f64) -> Vec<Vec<f64>> {
                (0..n)
                    .map(|_| (0..3).map(|_| rng.gen_range(-pi..pi)).collect())
                    .collect()
            }
            let mut d1 = draw(&mut rng, n1, pi);
            // nested random subsets: shuffle, then the subsets are prefixes
            d1.shuffle(&mut rng);
            let d2 = d1[..n2].to_vec();
            let d3 = d2[..n3].to_vec();
            let z1 = DVector::from_iterator(n1, d1.iter().map(|x| ishigami_level1(x)));
            let z2 = DVector::from_iterator(n2, d2.iter().map(|x| ishigami_level2(x)));
            let z3 = DVector::from_iterator(n3, d3.iter().map(|x| ishigami_level3(x)));
            let test_inputs = draw(&mut rng, n_test, pi);
            let test_truth = test_inputs.iter().map(|x| ishigami_level3(x)).collect();
            let mut config = RunConfig::default();
            config.seed = seed;
            config.kernel.family = "matern52".into();
            Ok(DemoData {
                name: "ishigami",
                levels: vec![DesignSet::new(d1)?, DesignSet::new(d2)?, DesignSet::new(d3)?],
                observations: vec![z1, z2, z3],
                config,
                test_inputs,
                test_truth,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn forrester_values_match_the_closed_forms() {
        assert_relative_eq!(forrester_expensive(0.0), 4.0 * (-4.0_f64).sin());
        assert_relative_eq!(forrester_cheap(1.0), 0.5 * forrester_expensive(1.0) + 0.0);
        assert_relative_eq!(
            forrester_highfreq_expensive(0.3),
            forrester_expensive(0.3) + (10.0 * (1.5_f64).cos()).sin()
        );
    }

    #[test]
    fn demo_instances_are_nested_and_deterministic() {
        for (problem, s) in [
            (DemoProblem::Forrester, 2),
            (DemoProblem::ForresterHighFreq, 2),
            (DemoProblem::Ishigami, 3),
        ] {
            let a = generate(problem, 7).unwrap();
            let b = generate(problem, 7).unwrap();
            assert_eq!(a.levels.len(), s);
            for t in 0..s {
                assert_eq!(a.levels[t].points(), b.levels[t].points());
                assert_eq!(a.observations[t], b.observations[t]);
            }
            // nesting check: each level's points appear in the parent
            for t in 1..s {
                for p in a.levels[t].points() {
                    assert!(
                        a.levels[t - 1].points().iter().any(|q| q == p),
                        "level {} point missing from parent",
                        t + 1
                    );
                }
            }
            assert_eq!(a.test_inputs.len(), a.test_truth.len());
        }
    }

    #[test]
    fn ishigami_seed_changes_the_designs() {
        let a = generate(DemoProblem::Ishigami, 1).unwrap();
        let b = generate(DemoProblem::Ishigami, 2).unwrap();
        assert_ne!(a.levels[0].points()[0], b.levels[0].points()[0]);
    }
}
