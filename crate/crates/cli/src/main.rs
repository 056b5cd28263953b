use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sfhn_cli::acceptance::run_acceptance;
use sfhn_cli::experiments::{self, Experiment};
use sfhn_cli::{with_workers, workers_from_env, write_artifacts, Artifact, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "sfhn", version, about = "Stochastic FitzHugh-Nagumo experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.paths`.
    #[arg(long)]
    paths: Option<usize>,
    /// Output directory (default `out/<subcommand>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues and modes of the diffusion operator.
    Eigen(Common),
    /// Sample paths of the cubic (or configured) system.
    Simulate(Common),
    /// Synchronously coupled pairs and their contraction.
    Couple(Common),
    /// Convergence of the regularized drift as eps → 0.
    Convergence(Common),
    /// Second and fourth moment curves.
    Moments(Common),
    /// Invariant measure: time vs ensemble histograms, two-start test, pullback ladder.
    Invariant(Common),
    /// Linear case against the exact stationary covariances.
    LinearOracle(Common),
    /// Dynkin identity for a cylindrical exponential.
    Dynkin {
        #[command(flatten)]
        common: Common,
        /// Comma-separated u-modes of h.
        #[arg(long, value_delimiter = ',')]
        h_modes: Option<Vec<usize>>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Run the acceptance criteria and print one line per criterion.
    Acceptance {
        /// Reduced sizes for a smoke run.
        #[arg(long)]
        quick: bool,
        /// Only these criteria (comma-separated ids).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
        /// Write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    if let Some(p) = common.paths {
        cfg.run.paths = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn experiment(exp: Experiment, common: &Common, cfg: ExperimentConfig, workers: Option<usize>) -> Result<(), CliError> {
    let artifacts: Vec<Artifact> = with_workers(workers, || experiments::run(exp, &cfg))??;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out").join(exp.name()));
    write_artifacts(&out, &artifacts)?;
    eprintln!("{}: wrote {} files to {}", exp.name(), artifacts.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let workers = workers_from_env()?;
    let simple = |exp, common: &Common| experiment(exp, common, resolve(common)?, workers);
    match cli.command {
        Command::Eigen(c) => simple(Experiment::Eigen, &c),
        Command::Simulate(c) => simple(Experiment::Simulate, &c),
        Command::Couple(c) => simple(Experiment::Couple, &c),
        Command::Convergence(c) => simple(Experiment::Convergence, &c),
        Command::Moments(c) => simple(Experiment::Moments, &c),
        Command::Invariant(c) => simple(Experiment::Invariant, &c),
        Command::LinearOracle(c) => simple(Experiment::LinearOracle, &c),
        Command::Dynkin { common, h_modes, t, dt } => {
            let mut cfg = resolve(&common)?;
            if let Some(h) = h_modes {
                cfg.dynkin.h_modes = h;
            }
            if let Some(t) = t {
                cfg.dynkin.t = t;
            }
            if let Some(dt) = dt {
                cfg.run.dt = dt;
            }
            experiment(Experiment::Dynkin, &common, cfg, workers)
        }
        Command::Acceptance { quick, only, json } => {
            let report = with_workers(workers, || run_acceptance(quick, &only, |r| println!("{}", r.line())))??;
            let passed = report.criteria.iter().filter(|c| c.pass).count();
            println!("{passed}/{} criteria passed", report.criteria.len());
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Numerics(e.to_string()))?;
                std::fs::write(path, text + "\n")?;
            }
            if report.all_pass {
                Ok(())
            } else {
                Err(CliError::AcceptanceFailed(format!("{} of {} criteria failed", report.criteria.len() - passed, report.criteria.len())))
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sfhn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
