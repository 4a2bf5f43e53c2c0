//! Saving and loading fitted models as versioned JSON.
//!
//! The file stores the canonical (sorted) designs, observations, kernel
//! settings including the nugget that was actually used, the per-level
//! posteriors, and the run configuration. Loading rebuilds the factored
//! structures from these numbers; floats are serialized in shortest
//! round-trip form, so a reloaded model reproduces predictions bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{Basis, FittedScale};
use crate::config::RunConfig;
use crate::design::{DesignSet, SortedDesigns};
use crate::error::{CokrigError, Result};
use crate::estimate::{build_fitted, FittedModel, LevelPosterior};
use crate::kernel::{factor_spd_fixed, Kernel, KernelFamily};
use crate::model::LevelStructure;

const FORMAT: &str = "cokrig-model";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LevelRecord {
    points: Vec<Vec<f64>>,
    observations: Vec<f64>,
    family: String,
    theta: Vec<f64>,
    nugget: f64,
    trend: Vec<String>,
    sigma2: f64,
    lambda_mean: Vec<f64>,
    lambda_cov_over_sigma2: Vec<Vec<f64>>,
    alpha: f64,
    q_half: f64,
    dof: usize,
}

#[derive(Serialize, Deserialize)]
struct ScaleRecord {
    tokens: Vec<String>,
    coeffs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    dim: usize,
    levels: Vec<LevelRecord>,
    scales: Vec<ScaleRecord>,
    config: RunConfig,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(CokrigError::invalid(format!("malformed matrix for {what}")));
    }
    let k = rows[0].len();
    Ok(DMatrix::from_fn(n, k, |i, j| rows[i][j]))
}

/// Writes the fitted model to `path` as JSON.
pub fn save(model: &FittedModel, path: &Path) -> Result<()> {
    let st = &model.structures;
    let levels = (0..model.s())
        .map(|t| {
            let lvl = st.level(t);
            let post = &model.posteriors[t];
            LevelRecord {
                points: st.designs().levels[t].points().to_vec(),
                observations: model.observations[t].iter().copied().collect(),
                family: lvl.kernel.family.to_string(),
                theta: lvl.kernel.theta.clone(),
                nugget: lvl.factored.nugget(),
                trend: lvl.trend.tokens(),
                sigma2: lvl.sigma2,
                lambda_mean: post.lambda_mean.iter().copied().collect(),
                lambda_cov_over_sigma2: matrix_rows(&post.lambda_cov_over_sigma2),
                alpha: post.alpha,
                q_half: post.q_half,
                dof: post.dof,
            }
        })
        .collect();
    let scales = st
        .scales()
        .iter()
        .map(|s| ScaleRecord {
            tokens: s.basis.tokens(),
            coeffs: s.coeffs.iter().copied().collect(),
        })
        .collect();
    let file = ModelFile {
        format: FORMAT.into(),
        version: VERSION,
        dim: model.dim(),
        levels,
        scales,
        config: model.config.clone(),
    };
    let f = File::create(path).map_err(|e| CokrigError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, &file)
        .map_err(|e| CokrigError::invalid(format!("writing {}: {e}", path.display())))?;
    w.write_all(b"\n")
        .map_err(|e| CokrigError::io(path.display().to_string(), e))?;
    Ok(())
}

/// Reads a model back, rebuilding the factored correlation matrices with
/// the recorded nuggets (no regularization ladder on reload).
pub fn load(path: &Path) -> Result<FittedModel> {
    let f = File::open(path).map_err(|e| CokrigError::io(path.display().to_string(), e))?;
    let file: ModelFile = serde_json::from_reader(BufReader::new(f)).map_err(|e| {
        CokrigError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        }
    })?;
    if file.format != FORMAT {
        return Err(CokrigError::invalid(format!(
            "{} is not a model file (format {:?})",
            path.display(),
            file.format
        )));
    }
    if file.version != VERSION {
        return Err(CokrigError::invalid(format!(
            "unsupported model file version {} (this build reads {})",
            file.version, VERSION
        )));
    }
    if file.levels.is_empty() {
        return Err(CokrigError::invalid("model file has no levels"));
    }
    if file.scales.len() + 1 != file.levels.len() {
        return Err(CokrigError::invalid(
            "model file scale count does not match the level count",
        ));
    }

    let dim = file.dim;
    let mut designs = Vec::with_capacity(file.levels.len());
    let mut level_structs = Vec::with_capacity(file.levels.len());
    let mut posteriors = Vec::with_capacity(file.levels.len());
    let mut observations = Vec::with_capacity(file.levels.len());
    for (t, rec) in file.levels.iter().enumerate() {
        let design = DesignSet::new(rec.points.clone())?;
        if design.dim() != dim {
            return Err(CokrigError::DimensionMismatch {
                context: format!("model file level {} points", t + 1),
                expected: dim,
                got: design.dim(),
            });
        }
        if rec.observations.len() != design.n() {
            return Err(CokrigError::DimensionMismatch {
                context: format!("model file level {} observations", t + 1),
                expected: design.n(),
                got: rec.observations.len(),
            });
        }
        let family: KernelFamily = rec.family.parse()?;
        let kernel = Kernel::new(family, rec.theta.clone())?;
        if kernel.dim() != dim {
            return Err(CokrigError::DimensionMismatch {
                context: format!("model file level {} theta", t + 1),
                expected: dim,
                got: kernel.dim(),
            });
        }
        let corr = kernel.cross_matrix(design.points(), design.points());
        let factored = factor_spd_fixed(
            &corr,
            rec.nugget,
            1.0,
            &format!("level {} correlation", t + 1),
        )?;
        let trend = Basis::from_tokens(&rec.trend, dim)?;
        let lambda_mean = DVector::from_vec(rec.lambda_mean.clone());
        let lambda_cov = rows_matrix(
            &rec.lambda_cov_over_sigma2,
            &format!("level {} coefficient covariance", t + 1),
        )?;
        if lambda_cov.nrows() != lambda_mean.len() || lambda_cov.ncols() != lambda_mean.len() {
            return Err(CokrigError::invalid(format!(
                "model file level {} coefficient covariance shape mismatch",
                t + 1
            )));
        }
        posteriors.push(LevelPosterior {
            lambda_mean,
            lambda_cov_over_sigma2: lambda_cov,
            alpha: rec.alpha,
            q_half: rec.q_half,
            sigma2: rec.sigma2,
            dof: rec.dof,
            n: design.n(),
        });
        level_structs.push(LevelStructure {
            kernel,
            factored,
            trend,
            sigma2: rec.sigma2,
        });
        observations.push(DVector::from_vec(rec.observations.clone()));
        designs.push(design);
    }

    let mut scales = Vec::with_capacity(file.scales.len());
    for (i, rec) in file.scales.iter().enumerate() {
        let basis = Basis::from_tokens(&rec.tokens, dim)?;
        if basis.len() != rec.coeffs.len() {
            return Err(CokrigError::invalid(format!(
                "model file scale {} has {} coefficients for {} basis functions",
                i + 1,
                rec.coeffs.len(),
                basis.len()
            )));
        }
        scales.push(FittedScale {
            basis,
            coeffs: DVector::from_vec(rec.coeffs.clone()),
        });
    }

    // the stored designs are already in canonical order
    let identity_perms = designs.iter().map(|d| (0..d.n()).collect()).collect();
    let sorted = SortedDesigns {
        levels: designs,
        permutations: identity_perms,
    };
    build_fitted(
        sorted,
        observations,
        level_structs,
        scales,
        posteriors,
        file.config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::fit;
    use crate::predict::predict_one;

    fn fitted() -> FittedModel {
        let f1 = |x: f64| (10.0 * x).sin() + 0.1 * x;
        let f2 = |x: f64| (1.2 - 0.3 * x) * f1(x) + 0.4 * (4.0 * x).cos();
        let d1: Vec<f64> = (0..14).map(|i| i as f64 / 13.0).collect();
        let d2: Vec<f64> = (0..7).map(|i| i as f64 * 2.0 / 13.0).collect();
        let z1 = DVector::from_iterator(14, d1.iter().map(|&x| f1(x)));
        let z2 = DVector::from_iterator(7, d2.iter().map(|&x| f2(x)));
        let levels = vec![
            DesignSet::new(d1.iter().map(|&x| vec![x]).collect()).unwrap(),
            DesignSet::new(d2.iter().map(|&x| vec![x]).collect()).unwrap(),
        ];
        let mut config = RunConfig::default();
        config.kernel.family = "matern52".into();
        config.kernel.theta_fixed = vec![vec![0.35], vec![0.3]];
        config.trend.bases = vec![vec!["1".into()], vec!["1".into(), "x1".into()]];
        config.scale.bases = vec![vec!["1".into(), "x1".into()]];
        fit(levels, vec![z1, z2], &config).unwrap()
    }

    #[test]
    fn round_trip_reproduces_predictions_bitwise() {
        let model = fitted();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&model, &path).unwrap();
        let loaded = load(&path).unwrap();

        assert_eq!(model.beta_full, loaded.beta_full);
        assert_eq!(model.z_stacked, loaded.z_stacked);
        assert_eq!(model.residual, loaded.residual);
        for &x in &[0.0, 0.111, 0.5, 0.77, 1.0] {
            let a = predict_one(&model, &[x]);
            let b = predict_one(&loaded, &[x]);
            assert_eq!(a.mean.to_bits(), b.mean.to_bits(), "mean at {x}");
            assert_eq!(a.var.to_bits(), b.var.to_bits(), "var at {x}");
        }
    }

    #[test]
    fn save_is_deterministic() {
        let model = fitted();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        save(&model, &p1).unwrap();
        save(&model, &p2).unwrap();
        let a = std::fs::read(&p1).unwrap();
        let b = std::fs::read(&p2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_foreign_and_future_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        std::fs::write(&path, r#"{"format":"other","version":1,"dim":1,"levels":[],"scales":[],"config":{}}"#)
            .unwrap();
        assert!(load(&path).is_err());
        std::fs::write(
            &path,
            r#"{"format":"cokrig-model","version":99,"dim":1,"levels":[],"scales":[],"config":{}}"#,
        )
        .unwrap();
        let err = format!("{}", load(&path).err().unwrap());
        assert!(err.contains("version"), "message: {err}");
        std::fs::write(&path, "not json").unwrap();
        assert!(load(&path).is_err());
    }
}

