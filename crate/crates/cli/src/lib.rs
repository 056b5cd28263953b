//! Experiment runners behind the `sfhn` binary.
//!
//! Every subcommand produces a list of named artifacts (CSV curves and a
//! JSON summary) in memory; the binary writes them to `--out`. Keeping the
//! bytes in memory lets the reproducibility check compare runs directly.

use std::path::Path;

use serde::Serialize;
use sfhn::SfhnError;

pub mod acceptance;
pub mod config;
pub mod experiments;

pub use config::ExperimentConfig;

/// Version of the JSON summary layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that fixes the worker count.
pub const WORKERS_ENV: &str = "SFHN_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical blow-up in base interval {interval} (t = {time})")]
    BlowUp { interval: i64, time: f64 },
    #[error("numerical failure: {0}")]
    Numerics(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("acceptance failed: {0}")]
    AcceptanceFailed(String),
}

impl From<SfhnError> for CliError {
    fn from(e: SfhnError) -> Self {
        match e {
            SfhnError::InvalidParam { .. }
            | SfhnError::DimensionMismatch { .. }
            | SfhnError::UnsupportedFastPath(_) => CliError::Config(e.to_string()),
            SfhnError::BlowUp { interval, time } => CliError::BlowUp { interval, time },
            other => CliError::Numerics(other.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::BlowUp { .. } => 3,
            CliError::Numerics(_) | CliError::Io(_) | CliError::AcceptanceFailed(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn text(name: impl Into<String>, body: String) -> Self {
        Artifact { name: name.into(), bytes: body.into_bytes() }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    version: &'a str,
    subcommand: &'a str,
    master_seed: u64,
    config: &'a ExperimentConfig,
    result: &'a T,
}

/// `summary.json` with the resolved config, seed and version.
pub fn summary_artifact<T: Serialize>(subcommand: &str, cfg: &ExperimentConfig, result: &T) -> Result<Artifact, CliError> {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        master_seed: cfg.master_seed,
        config: cfg,
        result,
    };
    let mut bytes = serde_json::to_vec_pretty(&env).map_err(|e| CliError::Numerics(e.to_string()))?;
    bytes.push(b'\n');
    Ok(Artifact { name: "summary.json".into(), bytes })
}

pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    for a in artifacts {
        std::fs::write(dir.join(&a.name), &a.bytes)?;
    }
    Ok(())
}

/// Runs `f` on a rayon pool of `workers` threads (the global pool when
/// `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CliError::Numerics(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Worker count from the environment, if set.
pub fn workers_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("{WORKERS_ENV}: expected a positive integer, got {v:?}"))),
    }
}
