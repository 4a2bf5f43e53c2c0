//! Command line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use cokrig::bayes::{bayes_predict, posterior_laws, BayesOptions, Priors2Level};
use cokrig::bench::{run_complexity_bench, run_three_level_bench};
use cokrig::config::RunConfig;
use cokrig::demo::{generate, DemoProblem};
use cokrig::design::DesignSet;
use cokrig::error::{CokrigError, Result};
use cokrig::estimate::fit;
use cokrig::io;
use cokrig::modelfile;
use cokrig::predict::predict;
use cokrig::validate::{compute_metrics, loo_cv, Q2Mode};

#[derive(Parser)]
#[command(
    name = "cokrig",
    version,
    about = "Multi-level Gaussian process surrogates from nested designs"
)]
struct Cli {
    /// Worker threads for parallel sections (0 keeps the library default).
    /// Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model from per-level CSV files, cheapest level first.
    Fit {
        /// Level data file `x1..xd,y`; repeat once per level, cheapest
        /// first.
        #[arg(long = "data", required = true, num_args = 1)]
        data: Vec<PathBuf>,
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the fitted model.
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
        /// Overrides the configured random seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict at query points with a fitted model (plug-in distribution).
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Query points `x1..xd`.
        #[arg(long)]
        query: PathBuf,
        #[arg(long, default_value = "predictions.csv")]
        out: PathBuf,
    },
    /// Predict with the fully Bayesian two-level distribution.
    BayesPredict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long, default_value = "bayes_predictions.csv")]
        out: PathBuf,
        /// Also write one `value,density` file per query point here.
        #[arg(long)]
        density_dir: Option<PathBuf>,
        /// Overrides the configured random seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Leave-one-out cross validation over the most expensive level.
    Cv {
        #[arg(long = "data", required = true, num_args = 1)]
        data: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma separated 0-based rows of the expensive level to hold out;
        /// default all.
        #[arg(long)]
        ids: Option<String>,
        /// Also cross validate the sub-model built from the K most
        /// expensive levels and report both error levels.
        #[arg(long)]
        compare: Option<usize>,
        #[arg(long, default_value = "cv.csv")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Time the dense joint solve against the recursive per-level path.
    Bench {
        /// Comma separated expensive-design sizes.
        #[arg(long, default_value = "50,100,200,400")]
        n2: String,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Optional CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also run the three-level 3-d scenario at sizes 400/200/50.
        #[arg(long)]
        three_level: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a built-in example problem as CSV files.
    Demo {
        /// forrester, forrester-highfreq or ishigami.
        #[arg(long)]
        problem: String,
        #[arg(long, default_value = "demo")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_levels(paths: &[PathBuf]) -> Result<(Vec<DesignSet>, Vec<DVector<f64>>)> {
    let mut levels = Vec::with_capacity(paths.len());
    let mut observations = Vec::with_capacity(paths.len());
    for (t, path) in paths.iter().enumerate() {
        let (points, values) = io::read_level_csv(path)?;
        if points.is_empty() {
            return Err(CokrigError::invalid(format!(
                "level {} has 0 observations ({})",
                t + 1,
                path.display()
            )));
        }
        levels.push(DesignSet::new(points)?);
        observations.push(DVector::from_vec(values));
    }
    Ok((levels, observations))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CokrigError::io(p.display().to_string(), e))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn parse_ids(ids: &str) -> Result<Vec<usize>> {
    ids.split(',')
        .map(|tok| {
            tok.trim().parse::<usize>().map_err(|_| CokrigError::InvalidParameter {
                name: "ids".into(),
                reason: format!("not a nonnegative integer: {tok:?}"),
            })
        })
        .collect()
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit {
            data,
            config,
            out,
            seed,
        } => {
            let config = load_config(config.as_deref(), seed)?;
            let (levels, observations) = load_levels(&data)?;
            let model = fit(levels, observations, &config)?;
            print!("{}", model.summary());
            modelfile::save(&model, &out)?;
            println!("model written to {}", out.display());
            Ok(())
        }
        Command::Predict { model, query, out } => {
            let model = modelfile::load(&model)?;
            let points = io::read_query_csv(&query)?;
            if points.is_empty() {
                return Err(CokrigError::invalid("the query file has no points"));
            }
            let preds = predict(&model, &points)?;
            let means: Vec<f64> = preds.iter().map(|p| p.mean).collect();
            let stds: Vec<f64> = preds.iter().map(|p| p.std()).collect();
            io::write_predictions_csv(&out, &points, &means, &stds)?;
            println!("{} predictions written to {}", points.len(), out.display());
            Ok(())
        }
        Command::BayesPredict {
            model,
            query,
            out,
            density_dir,
            seed,
        } => {
            let model = modelfile::load(&model)?;
            let points = io::read_query_csv(&query)?;
            if points.is_empty() {
                return Err(CokrigError::invalid("the query file has no points"));
            }
            let priors = Priors2Level::from_config(&model.config, &model)?;
            let laws = posterior_laws(&model, &priors)?;
            let seed = seed.unwrap_or(model.config.seed);
            let mut opts = BayesOptions::from_config(&model.config, seed)?;
            if density_dir.is_some() {
                opts.density_points = 241;
            }
            let preds = bayes_predict(&model, &laws, &points, &opts)?;
            let means: Vec<f64> = preds.iter().map(|p| p.mean).collect();
            let stds: Vec<f64> = preds.iter().map(|p| p.std()).collect();
            io::write_predictions_csv(&out, &points, &means, &stds)?;
            println!(
                "{} Bayesian predictions written to {} ({} variance nodes, {} particles, seed {})",
                points.len(),
                out.display(),
                preds[0].nodes,
                preds[0].particles,
                seed
            );
            if let Some(dir) = density_dir {
                std::fs::create_dir_all(&dir)
                    .map_err(|e| CokrigError::io(dir.display().to_string(), e))?;
                for (i, p) in preds.iter().enumerate() {
                    let density = p.density.as_ref().expect("density requested");
                    let path = dir.join(format!("point_{:04}.csv", i + 1));
                    io::write_density_csv(&path, density)?;
                }
                println!("densities written to {}", dir.display());
            }
            Ok(())
        }
        Command::Cv {
            data,
            config,
            ids,
            compare,
            out,
            seed,
        } => {
            let config = load_config(config.as_deref(), seed)?;
            let (levels, observations) = load_levels(&data)?;
            let ids = match &ids {
                Some(s) => Some(parse_ids(s)?),
                None => None,
            };
            let report = loo_cv(&levels, &observations, &config, ids.as_deref())?;
            io::write_cv_csv(&out, &report.rows)?;
            println!(
                "cross validation over {} points: rmse = {:.6e} (theta {})",
                report.rows.len(),
                report.rmse,
                if report.refitted_theta { "refit per fold" } else { "fixed" }
            );
            println!("rows written to {}", out.display());
            if let Some(k) = compare {
                let s = levels.len();
                if k == 0 || k >= s {
                    return Err(CokrigError::InvalidParameter {
                        name: "compare".into(),
                        reason: format!("needs 1 <= K < {s} levels, got {k}"),
                    });
                }
                let sub_levels = levels[s - k..].to_vec();
                let sub_obs = observations[s - k..].to_vec();
                let mut sub_config = config.clone();
                let trim = |v: &mut Vec<Vec<String>>| {
                    if v.len() == s {
                        *v = v[s - k..].to_vec();
                    }
                };
                trim(&mut sub_config.trend.bases);
                if sub_config.scale.bases.len() == s - 1 {
                    sub_config.scale.bases = sub_config.scale.bases[s - k..].to_vec();
                }
                if sub_config.kernel.theta_fixed.len() == s {
                    sub_config.kernel.theta_fixed = sub_config.kernel.theta_fixed[s - k..].to_vec();
                }
                let sub = loo_cv(&sub_levels, &sub_obs, &sub_config, ids.as_deref())?;
                println!(
                    "comparison: all {s} levels rmse = {:.6e}, top {k} level(s) rmse = {:.6e}, ratio = {:.3}",
                    report.rmse,
                    sub.rmse,
                    sub.rmse / report.rmse.max(1e-300)
                );
            }
            Ok(())
        }
        Command::Bench {
            n2,
            repeats,
            out,
            three_level,
            seed,
        } => {
            let sizes: Vec<usize> = n2
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<usize>().map_err(|_| CokrigError::InvalidParameter {
                        name: "n2".into(),
                        reason: format!("not a size: {tok:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            let report = run_complexity_bench(&sizes, repeats, seed)?;
            println!("n2,n1,t_crude_s,t_light_s,ratio");
            for r in &report.records {
                println!(
                    "{},{},{:.6},{:.6},{:.3}",
                    r.n2, r.n1, r.t_crude_s, r.t_light_s, r.ratio
                );
            }
            if let Some(slope) = report.slope {
                println!("log-log slope of t_crude: {slope:.3}");
            }
            if let Some(path) = out {
                io::write_bench_csv(&path, &report)?;
                println!("records written to {}", path.display());
            }
            if three_level {
                let r = run_three_level_bench(repeats, seed)?;
                println!(
                    "three-level {:?}: crude {:.6}s, light {:.6}s, ratio {:.3}",
                    r.n, r.t_crude_s, r.t_light_s, r.ratio
                );
            }
            Ok(())
        }
        Command::Demo {
            problem,
            out_dir,
            seed,
        } => {
            let problem: DemoProblem = problem.parse()?;
            let data = generate(problem, seed)?;
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| CokrigError::io(out_dir.display().to_string(), e))?;
            let mut level_paths = Vec::new();
            for (t, (design, z)) in data.levels.iter().zip(&data.observations).enumerate() {
                let path = out_dir.join(format!("level{}.csv", t + 1));
                let values: Vec<f64> = z.iter().copied().collect();
                io::write_level_csv(&path, design.points(), &values)?;
                level_paths.push(path);
            }
            let test_path = out_dir.join("test.csv");
            io::write_level_csv(&test_path, &data.test_inputs, &data.test_truth)?;
            let config_path = out_dir.join("run.toml");
            std::fs::write(&config_path, data.config.to_toml())
                .map_err(|e| CokrigError::io(config_path.display().to_string(), e))?;
            println!("{} problem written to {}", data.name, out_dir.display());
            let data_args: Vec<String> = level_paths
                .iter()
                .map(|p| format!("--data {}", p.display()))
                .collect();
            println!(
                "try: cokrig fit {} --config {}",
                data_args.join(" "),
                config_path.display()
            );

            // small self check so the demo doubles as a smoke test
            let model = fit(data.levels, data.observations, &data.config)?;
            let preds = predict(&model, &data.test_inputs)?;
            let means: Vec<f64> = preds.iter().map(|p| p.mean).collect();
            let stds: Vec<f64> = preds.iter().map(|p| p.std()).collect();
            let q2_mode = Q2Mode::from_config(&data.config)?;
            let metrics = compute_metrics(&data.test_truth, &means, &stds, q2_mode)?;
            match metrics.q2 {
                Some(q2) => println!(
                    "fit check on the test set: rmse = {:.4e}, q2 = {:.4}%",
                    metrics.rmse,
                    100.0 * q2
                ),
                None => println!("fit check on the test set: rmse = {:.4e}", metrics.rmse),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
