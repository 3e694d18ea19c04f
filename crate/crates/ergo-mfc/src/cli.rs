//! Config-driven command line interface.
//!
//! Every subcommand reads one JSON config file, runs a solver or
//! diagnostic, and writes its artifacts (CSV histories, checkpoints, a
//! `summary.json`) into the configured output directory. Unknown config
//! keys are rejected. Exit codes: 0 on success, 2 on configuration
//! errors, 3 when a solver aborts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::algo1::{self, TrainConfig};
use crate::bench::{self, FdConfig};
use crate::dgm::{self, DgmConfig};
use crate::field::Field;
use crate::model::{testcase, TestCase};
use crate::net::{load_checkpoint, save_checkpoint, ConstraintBounds, NetworkArch};
use crate::sde::{self, SimConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 3,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn solver_err(e: impl std::fmt::Display) -> CliError {
    CliError::Solver(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "ergo-mfc",
    about = "Solvers for ergodic mean field control and stationary games on the torus",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train the direct cost-minimization solver.
    SolveDirect {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the Deep Galerkin solver for the coupled system.
    SolveDgm {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the one-dimensional finite-difference benchmark.
    BenchmarkFd {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate the particle system under a computed control.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare a saved checkpoint against reference solutions.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train across network widths and seeds and aggregate the errors.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub testcase: u32,
    pub dimension: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum ArchConfig {
    SinPeriodic {
        units: usize,
        #[serde(default)]
        constraint: Option<ConstraintBounds>,
    },
    TanhEmbedded {
        hidden: Vec<usize>,
    },
}

impl ArchConfig {
    pub fn build(&self, d: usize) -> NetworkArch {
        match self {
            ArchConfig::SinPeriodic { units, constraint } => {
                let mut arch = NetworkArch::sin_periodic(d, *units);
                arch.constraint = *constraint;
                arch
            }
            ArchConfig::TanhEmbedded { hidden } => NetworkArch::tanh_embedded(d, hidden),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectSection {
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgmSection {
    pub arch_nu: ArchConfig,
    pub arch_p: ArchConfig,
    pub train: DgmConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSource {
    /// Feedback from the closed-form solution of the test case.
    Exact,
    /// Feedback from a fresh finite-difference solve.
    Fd,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub control: ControlSource,
    pub sim: SimConfig,
    #[serde(default)]
    pub fd: Option<FdConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub checkpoint: PathBuf,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    4000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub units: Vec<usize>,
    pub seeds: u64,
    pub train: TrainConfig,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub direct: Option<DirectSection>,
    #[serde(default)]
    pub dgm: Option<DgmSection>,
    #[serde(default)]
    pub fd: Option<FdConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub evaluate: Option<EvaluateSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(path).map_err(config_err)?;
    let config: RunConfig = serde_json::from_slice(&bytes).map_err(config_err)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let hash = format!("{:x}", hasher.finalize());
    Ok(LoadedConfig { config, hash })
}

fn load_case(problem: &ProblemConfig) -> Result<TestCase, CliError> {
    testcase(problem.testcase, problem.dimension).map_err(config_err)
}

fn write_summary(dir: &Path, value: serde_json::Value) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(&value).map_err(solver_err)?;
    std::fs::write(dir.join("summary.json"), text)?;
    Ok(())
}

/// Relative L² errors of a recovered solution against the closed-form
/// one, when the test case has it.
fn exact_errors(
    case: &TestCase,
    report: &algo1::SolutionReport,
    samples: usize,
    seed: u64,
) -> Option<(f64, f64, f64)> {
    let exact = case.exact.as_ref()?;
    let p_err = bench::relative_l2(
        &|x| report.p.value(x),
        &|x| exact.p.value(x) - exact_p_mean(case),
        case.spec.d,
        samples,
        seed,
    );
    let nu_err = bench::relative_l2(
        &|x| report.nu.value(x),
        &|x| exact.nu_at(x),
        case.spec.d,
        samples,
        seed,
    );
    Some((p_err, nu_err, (report.lambda - exact.lambda()).abs()))
}

fn exact_p_mean(case: &TestCase) -> f64 {
    // The recovered adjoint is normalized to zero mean; shift the exact
    // one accordingly before comparing.
    let exact = case.exact.as_ref().unwrap();
    let p = Arc::clone(&exact.p);
    let d = case.spec.d;
    if d <= 3 {
        crate::model::grid_mean(d, if d == 1 { 2048 } else { 64 }, |x| p.value(x))
    } else {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let mut x = vec![0.0; d];
        let mut acc = 0.0;
        for _ in 0..100_000 {
            for xi in x.iter_mut() {
                *xi = rng.gen::<f64>();
            }
            acc += p.value(&x);
        }
        acc / 100_000.0
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SolveDirect { config } => solve_direct(&config),
        Command::SolveDgm { config } => solve_dgm(&config),
        Command::BenchmarkFd { config } => benchmark_fd(&config),
        Command::Simulate { config } => simulate(&config),
        Command::Evaluate { config } => evaluate(&config),
        Command::Sweep { config } => sweep(&config),
    }
}

fn solve_direct(path: &Path) -> Result<(), CliError> {
    let loaded = load_config(path)?;
    let cfg = &loaded.config;
    let section = cfg
        .direct
        .as_ref()
        .ok_or_else(|| CliError::Config("missing `direct` section".into()))?;
    let case = load_case(&cfg.problem)?;
    let arch = section.arch.build(cfg.problem.dimension);
    arch.validate().map_err(config_err)?;
    let result = algo1::train(&case.spec, &arch, &section.train).map_err(solver_err)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    algo1::write_history_csv(&cfg.output_dir.join("history.csv"), &result.history)
        .map_err(solver_err)?;
    save_checkpoint(
        &cfg.output_dir.join("direct.ckpt"),
        &arch,
        &result.params,
        section.train.seed,
        result.iterations_run,
    )
    .map_err(solver_err)?;
    let h = algo1::trained_field(&arch, &result.params);
    let report = algo1::recover_solution(&case.spec, h).map_err(solver_err)?;
    let errors = exact_errors(&case, &report, 4000, 1);
    write_summary(
        &cfg.output_dir,
        json!({
            "command": "solve-direct",
            "config_hash": loaded.hash,
            "testcase": cfg.problem.testcase,
            "dimension": cfg.problem.dimension,
            "iterations": result.iterations_run,
            "final_cost": result.history.last().map(|r| r.cost),
            "clamp_hits": result.clamp_hits_total,
            "lambda": report.lambda,
            "exact_p_rel_l2": errors.map(|e| e.0),
            "exact_nu_rel_l2": errors.map(|e| e.1),
            "exact_lambda_abs_err": errors.map(|e| e.2),
        }),
    )
}

fn solve_dgm(path: &Path) -> Result<(), CliError> {
    let loaded = load_config(path)?;
    let cfg = &loaded.config;
    let section = cfg
        .dgm
        .as_ref()
        .ok_or_else(|| CliError::Config("missing `dgm` section".into()))?;
    let case = load_case(&cfg.problem)?;
    let d = cfg.problem.dimension;
    let arch_nu = section.arch_nu.build(d);
    let arch_p = section.arch_p.build(d);
    let result =
        dgm::train_dgm(&case.spec, &arch_nu, &arch_p, &section.train).map_err(solver_err)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    dgm::write_dgm_history_csv(&cfg.output_dir.join("dgm_history.csv"), &result.history)
        .map_err(solver_err)?;
    // Checkpoint both networks plus the ergodic constant as raw JSON.
    let ckpt = json!({
        "arch_nu": arch_nu,
        "arch_p": arch_p,
        "params": result.params,
    });
    std::fs::write(
        cfg.output_dir.join("dgm.ckpt.json"),
        serde_json::to_string(&ckpt).map_err(solver_err)?,
    )?;
    let (nu, p, lambda) = dgm::dgm_fields(&arch_nu, &arch_p, &result.params);
    let mut summary = json!({
        "command": "solve-dgm",
        "config_hash": loaded.hash,
        "testcase": cfg.problem.testcase,
        "dimension": d,
        "iterations": result.iterations_run,
        "lambda": lambda,
        "final_loss": result.history.last().map(|r| r.loss),
    });
    if let Some(exact) = &case.exact {
        let nu_err = bench::relative_l2(
            &|x| nu.value(x),
            &|x| exact.nu_at(x),
            d,
            4000,
            1,
        );
        let p_err = bench::relative_l2(
            &|x| p.value(x) - crate::model::grid_mean(d.min(3), 64, |y| p.value(y)),
            &|x| exact.p.value(x) - exact_p_mean(&case),
            d,
            4000,
            1,
        );
        summary["exact_nu_rel_l2"] = json!(nu_err);
        summary["exact_p_rel_l2"] = json!(p_err);
        summary["exact_lambda_abs_err"] = json!((lambda - exact.lambda()).abs());
    }
    write_summary(&cfg.output_dir, summary)
}

fn benchmark_fd(path: &Path) -> Result<(), CliError> {
    let loaded = load_config(path)?;
    let cfg = &loaded.config;
    let fd_cfg = cfg
        .fd
        .ok_or_else(|| CliError::Config("missing `fd` section".into()))?;
    let case = load_case(&cfg.problem)?;
    let sol = bench::solve_fd(&case.spec, &fd_cfg).map_err(solver_err)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    bench::write_fd_csv(&cfg.output_dir.join("fd.csv"), &sol).map_err(solver_err)?;
    let mut summary = json!({
        "command": "benchmark-fd",
        "config_hash": loaded.hash,
        "testcase": cfg.problem.testcase,
        "m": sol.m,
        "lambda": sol.lambda,
        "outer_iterations": sol.outer_iterations,
        "newton_iterations": sol.newton_iterations,
    });
    if let Some(exact) = &case.exact {
        let p_mean = exact_p_mean(&case);
        summary["exact_p_rel_l2"] = json!(bench::relative_l2(
            &|x| sol.p_at(x[0]),
            &|x| exact.p.value(x) - p_mean,
            1,
            4000,
            1
        ));
        summary["exact_nu_rel_l2"] = json!(bench::relative_l2(
            &|x| sol.nu_at(x[0]),
            &|x| exact.nu_at(x),
            1,
            4000,
            1
        ));
        summary["exact_lambda_abs_err"] = json!((sol.lambda - exact.lambda()).abs());
    }
    write_summary(&cfg.output_dir, summary)
}

fn simulate(path: &Path) -> Result<(), CliError> {
    let loaded = load_config(path)?;
    let cfg = &loaded.config;
    let section = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("missing `simulate` section".into()))?;
    let case = load_case(&cfg.problem)?;
    let p: Arc<dyn Field> = match section.control {
        ControlSource::Exact => {
            let exact = case.exact.as_ref().ok_or_else(|| {
                CliError::Config("this test case has no closed-form control".into())
            })?;
            Arc::clone(&exact.p)
        }
        ControlSource::Fd => {
            let fd_cfg = section.fd.unwrap_or_default();
            let sol = bench::solve_fd(&case.spec, &fd_cfg).map_err(solver_err)?;
            let sol = Arc::new(sol);
            let s2 = Arc::clone(&sol);
            Arc::new(crate::field::FnField::new(
                1,
                move |x: &[f64]| sol.p_at(x[0]),
                move |x: &[f64]| {
                    // Central differences of the interpolant.
                    let h = 1e-4;
                    let v = s2.p_at(x[0]);
                    let vp = s2.p_at(x[0] + h);
                    let vm = s2.p_at(x[0] - h);
                    crate::field::FieldJet {
                        value: v,
                        grad: vec![(vp - vm) / (2.0 * h)],
                        laplacian: (vp - 2.0 * v + vm) / (h * h),
                    }
                },
            ))
        }
    };
    let result = sde::simulate(&case.spec, p.as_ref(), &section.sim).map_err(solver_err)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    sde::write_histogram_csv(&cfg.output_dir.join("histogram.csv"), &result)
        .map_err(solver_err)?;
    let mut summary = json!({
        "command": "simulate",
        "config_hash": loaded.hash,
        "testcase": cfg.problem.testcase,
        "particles": result.particles,
        "steps": result.steps,
        "time_avg_cost": result.time_avg_cost,
    });
    if let Some(exact) = &case.exact {
        summary["tv_against_exact"] =
            json!(sde::tv_distance(&result.histogram, |x| exact.nu_at(&[x])));
    }
    write_summary(&cfg.output_dir, summary)
}

fn evaluate(path: &Path) -> Result<(), CliError> {
    let loaded = load_config(path)?;
    let cfg = &loaded.config;
    let section = cfg
        .evaluate
        .as_ref()
        .ok_or_else(|| CliError::Config("missing `evaluate` section".into()))?;
    let case = load_case(&cfg.problem)?;
    let (meta, params) = load_checkpoint(&section.checkpoint).map_err(config_err)?;
    if meta.arch.input_dim != cfg.problem.dimension {
        return Err(CliError::Config(format!(
            "checkpoint dimension {} does not match problem dimension {}",
            meta.arch.input_dim, cfg.problem.dimension
        )));
    }
    let h = algo1::trained_field(&meta.arch, &params);
    let report = algo1::recover_solution(&case.spec, h).map_err(solver_err)?;
    let errors = exact_errors(&case, &report, section.samples, section.seed);
    write_summary(
        &cfg.output_dir,
        json!({
            "command": "evaluate",
            "config_hash": loaded.hash,
            "checkpoint": section.checkpoint,
            "testcase": cfg.problem.testcase,
            "lambda": report.lambda,
            "exact_p_rel_l2": errors.map(|e| e.0),
            "exact_nu_rel_l2": errors.map(|e| e.1),
            "exact_lambda_abs_err": errors.map(|e| e.2),
        }),
    )
}

#[derive(Debug, Serialize)]
struct SweepRow {
    units: usize,
    seed: u64,
    p_rel_l2: f64,
    nu_rel_l2: f64,
    lambda_abs_err: f64,
}

fn sweep(path: &Path) -> Result<(), CliError> {
    let loaded = load_config(path)?;
    let cfg = &loaded.config;
    let section = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("missing `sweep` section".into()))?;
    let case = load_case(&cfg.problem)?;
    if case.exact.is_none() {
        return Err(CliError::Config(
            "sweeps need a test case with a closed-form solution".into(),
        ));
    }
    let d = cfg.problem.dimension;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut rows = Vec::new();
    for &units in &section.units {
        for seed in 0..section.seeds {
            let arch = NetworkArch::sin_periodic(d, units);
            let mut train_cfg = section.train.clone();
            // Width-normalized step size: both the kernel conditioning and
            // the coherent sampling noise scale linearly with the number of
            // units, so the configured rate is interpreted as lr per unit.
            train_cfg.lr.base /= units as f64;
            train_cfg.seed = train_cfg.seed.wrapping_add(seed);
            let result = algo1::train(&case.spec, &arch, &train_cfg).map_err(solver_err)?;
            let h = algo1::trained_field(&arch, &result.params);
            let report = algo1::recover_solution(&case.spec, h).map_err(solver_err)?;
            let (p_err, nu_err, l_err) =
                exact_errors(&case, &report, section.samples, seed).unwrap();
            rows.push(SweepRow {
                units,
                seed,
                p_rel_l2: p_err,
                nu_rel_l2: nu_err,
                lambda_abs_err: l_err,
            });
        }
    }
    // Raw rows plus per-width aggregates.
    {
        use std::io::Write as _;
        let mut f = std::fs::File::create(cfg.output_dir.join("sweep.csv"))?;
        writeln!(f, "units,seed,p_rel_l2,nu_rel_l2,lambda_abs_err")?;
        for r in &rows {
            writeln!(
                f,
                "{},{},{},{},{}",
                r.units, r.seed, r.p_rel_l2, r.nu_rel_l2, r.lambda_abs_err
            )?;
        }
    }
    let aggregates: Vec<serde_json::Value> = section
        .units
        .iter()
        .map(|&u| {
            let stats = |pick: &dyn Fn(&SweepRow) -> f64| {
                let errs: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.units == u)
                    .map(pick)
                    .collect();
                let mean = errs.iter().sum::<f64>() / errs.len() as f64;
                let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
                    / errs.len() as f64)
                    .sqrt();
                let mut sorted = errs;
                sorted.sort_by(f64::total_cmp);
                let median = sorted[sorted.len() / 2];
                (mean, sd, median)
            };
            let (nu_mean, nu_sd, nu_median) = stats(&|r| r.nu_rel_l2);
            let (p_mean, p_sd, p_median) = stats(&|r| r.p_rel_l2);
            json!({
                "units": u,
                "nu_mean": nu_mean, "nu_sd": nu_sd, "nu_median": nu_median,
                "p_mean": p_mean, "p_sd": p_sd, "p_median": p_median,
            })
        })
        .collect();
    write_summary(
        &cfg.output_dir,
        json!({
            "command": "sweep",
            "config_hash": loaded.hash,
            "testcase": cfg.problem.testcase,
            "seeds": section.seeds,
            "aggregates": aggregates,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: serde_json::Value) -> PathBuf {
        let path = dir.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
        path
    }

    #[test]
    fn rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            serde_json::json!({
                "problem": {"testcase": 1, "dimension": 1},
                "surprise": true
            }),
        );
        let err = load_config(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rejects_missing_section() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            serde_json::json!({"problem": {"testcase": 1, "dimension": 1}}),
        );
        let err = solve_direct(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn config_hash_is_stable_and_content_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            serde_json::json!({"problem": {"testcase": 1, "dimension": 1}}),
        );
        let a = load_config(&path).unwrap().hash;
        let b = load_config(&path).unwrap().hash;
        assert_eq!(a, b);
        let path2 = write_config(
            dir.path(),
            serde_json::json!({"problem": {"testcase": 2, "dimension": 1}}),
        );
        assert_ne!(a, load_config(&path2).unwrap().hash);
    }

    #[test]
    fn benchmark_fd_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let path = write_config(
            dir.path(),
            serde_json::json!({
                "problem": {"testcase": 4, "dimension": 1},
                "output_dir": out,
                "fd": {"m": 64}
            }),
        );
        benchmark_fd(&path).unwrap();
        assert!(out.join("fd.csv").exists());
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary["command"], "benchmark-fd");
        assert!(summary["lambda"].is_number());
        assert!(summary["config_hash"].is_string());
    }

    #[test]
    fn solve_direct_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let path = write_config(
            dir.path(),
            serde_json::json!({
                "problem": {"testcase": 1, "dimension": 1},
                "output_dir": out,
                "direct": {
                    "arch": {"type": "tanh_embedded", "hidden": [8]},
                    "train": {
                        "iterations": 20,
                        "batch_inner": 16,
                        "batch_normalizer": 16,
                        "lr": {"base": 0.01},
                        "seed": 1
                    }
                }
            }),
        );
        solve_direct(&path).unwrap();
        assert!(out.join("history.csv").exists());
        assert!(out.join("direct.ckpt").exists());
        assert!(out.join("summary.json").exists());
    }

    #[test]
    fn simulate_with_exact_control() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let path = write_config(
            dir.path(),
            serde_json::json!({
                "problem": {"testcase": 4, "dimension": 1},
                "output_dir": out,
                "simulate": {
                    "control": "exact",
                    "sim": {"particles": 200, "dt": 0.01, "steps": 50,
                            "burn_in": 10, "bins": 16, "seed": 3}
                }
            }),
        );
        simulate(&path).unwrap();
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap())
                .unwrap();
        assert!(summary["tv_against_exact"].is_number());
        assert!(out.join("histogram.csv").exists());
    }

    #[test]
    fn evaluate_roundtrip_through_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        // Train briefly, then evaluate the produced checkpoint.
        let train_path = write_config(
            dir.path(),
            serde_json::json!({
                "problem": {"testcase": 4, "dimension": 1},
                "output_dir": out,
                "direct": {
                    "arch": {"type": "tanh_embedded", "hidden": [8]},
                    "train": {
                        "iterations": 10,
                        "batch_inner": 16,
                        "batch_normalizer": 16,
                        "lr": {"base": 0.01},
                        "seed": 1
                    }
                }
            }),
        );
        solve_direct(&train_path).unwrap();
        let eval_out = dir.path().join("eval");
        let eval_path = dir.path().join("eval.json");
        std::fs::write(
            &eval_path,
            serde_json::to_string(&serde_json::json!({
                "problem": {"testcase": 4, "dimension": 1},
                "output_dir": eval_out,
                "evaluate": {"checkpoint": out.join("direct.ckpt"), "samples": 500}
            }))
            .unwrap(),
        )
        .unwrap();
        evaluate(&eval_path).unwrap();
        let summary: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(eval_out.join("summary.json")).unwrap(),
        )
        .unwrap();
        assert!(summary["exact_nu_rel_l2"].is_number());
    }
}
