//! Run configuration, shared by the CLI and the library entry points.
//!
//! Everything has a default so a minimal TOML file (or none at all) works.
//! Unknown keys are rejected to catch typos early.

use serde::{Deserialize, Serialize};

use crate::error::{CokrigError, Result};
use crate::kernel::RegularizationPolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random draw in a run derives from it.
    pub seed: u64,
    pub kernel: KernelConfig,
    pub trend: TrendConfig,
    pub scale: ScaleConfig,
    pub optimizer: OptimizerConfig,
    pub regularization: RegularizationPolicy,
    pub nesting: NestingConfig,
    pub bayes: BayesConfig,
    pub prior: PriorConfig,
    pub metrics: MetricsConfig,
    pub cv: CvConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            kernel: KernelConfig::default(),
            trend: TrendConfig::default(),
            scale: ScaleConfig::default(),
            optimizer: OptimizerConfig::default(),
            regularization: RegularizationPolicy::default(),
            nesting: NestingConfig::default(),
            bayes: BayesConfig::default(),
            prior: PriorConfig::default(),
            metrics: MetricsConfig::default(),
            cv: CvConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CokrigError::InvalidParameter {
            name: "config".into(),
            reason: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    /// `matern52` or `squared-exponential`, applied at every level.
    pub family: String,
    /// Fixed length scales per level; an empty inner list means the level's
    /// scales are optimized. An empty outer list optimizes every level.
    pub theta_fixed: Vec<Vec<f64>>,
    /// Search bounds for optimized length scales, as multiples of the input
    /// range per coordinate.
    pub theta_lower_scale: f64,
    pub theta_upper_scale: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            family: "matern52".into(),
            theta_fixed: Vec::new(),
            theta_lower_scale: 1e-3,
            theta_upper_scale: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TrendConfig {
    /// Basis tokens per level (`"1"`, `"x2"`, `"x1^2"`). Empty means a
    /// constant trend at every level.
    pub bases: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleConfig {
    /// Basis tokens for the scale factor between each adjacent pair of
    /// levels. Empty means a constant scale for every pair.
    pub bases: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Latin hypercube restarts over log length scales.
    pub starts: usize,
    /// How many of the best starts get a local refinement.
    pub top_starts: usize,
    /// Coordinate descent sweeps per refinement.
    pub sweeps: usize,
    /// Golden section tolerance in log length scale.
    pub tol_log: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            starts: 40,
            top_starts: 3,
            sweeps: 3,
            tol_log: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NestingConfig {
    /// Per-coordinate absolute tolerance for matching shared design points.
    pub tolerance: f64,
}

impl Default for NestingConfig {
    fn default() -> Self {
        NestingConfig { tolerance: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesConfig {
    /// Quadrature nodes per variance axis; 1 collapses the axis to the
    /// point estimate.
    pub grid: usize,
    /// Scale and trend particles per variance node.
    pub particles: usize,
    /// Tail probability cut for the variance quadrature range.
    pub cutoff: f64,
    /// Inner integral over the scale and trend coefficients: `mc` or
    /// `trapezoid` (trapezoid falls back to mc above two dimensions).
    pub inner: String,
    /// A level with variance below this times the observation variance is
    /// treated as deterministic and its axis collapses to a point.
    pub degenerate_rel: f64,
}

impl Default for BayesConfig {
    fn default() -> Self {
        BayesConfig {
            grid: 21,
            particles: 1000,
            cutoff: 1e-5,
            inner: "mc".into(),
            degenerate_rel: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Prior on the cheap-level coefficients and variance.
    pub level1: PriorGroupConfig,
    /// Prior on the scale and expensive-trend coefficients and the
    /// discrepancy variance.
    pub level2: PriorGroupConfig,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            level1: PriorGroupConfig::default(),
            level2: PriorGroupConfig::default(),
        }
    }
}

/// One normal-inverse-gamma prior group. The default regime is
/// non-informative (Jeffreys); switching to `informative` requires all four
/// hyperparameter fields, with `v_diag` the diagonal of the coefficient
/// prior covariance (relative to the level variance).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorGroupConfig {
    pub regime: String,
    pub b: Vec<f64>,
    pub v_diag: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for PriorGroupConfig {
    fn default() -> Self {
        PriorGroupConfig {
            regime: "non-informative".into(),
            b: Vec::new(),
            v_diag: Vec::new(),
            alpha: 0.0,
            gamma: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Denominator convention for Q2: `standard` uses the variance of the
    /// true values, `predicted` centers the predictions instead.
    pub q2: String,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            q2: "standard".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    /// `auto` re-optimizes length scales only when the fold count is at
    /// most `refit_limit`; `refit` always does; `fixed` never does.
    pub theta: String,
    /// Remove the held-out point from every level (false) or only from the
    /// most expensive level (true).
    pub keep_cheap: bool,
    pub refit_limit: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            theta: "auto".into(),
            keep_cheap: false,
            refit_limit: 20,
        }
    }
}
