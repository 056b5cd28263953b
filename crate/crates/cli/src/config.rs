//! Experiment configuration: one JSON document with a block per concern.
//! Every block has defaults and rejects unknown keys.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sfhn::noise::NoiseSpec;
use sfhn::solver::{Drift, InitialCondition, StudyConfig};
use sfhn::{Model, ModelParams, SfhnError};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub sigma2: f64,
    /// Decay exponent: `λ_k = σ²(1+k)^{−2s}`.
    pub s: f64,
    /// Explicit spectra; when given they replace the power law.
    pub lambda1: Option<Vec<f64>>,
    pub lambda2: Option<Vec<f64>>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { sigma2: 0.01, s: 1.0, lambda1: None, lambda2: None }
    }
}

impl NoiseConfig {
    pub fn build(&self, n_modes: usize) -> sfhn::Result<NoiseSpec> {
        match (&self.lambda1, &self.lambda2) {
            (Some(a), Some(b)) => {
                let spec = NoiseSpec::from_tables(a.clone(), b.clone())?;
                spec.check_modes(n_modes)?;
                Ok(spec)
            }
            (None, None) => NoiseSpec::power_law(n_modes, self.sigma2, self.s),
            _ => Err(SfhnError::invalid("noise", "lambda1 and lambda2 must be given together")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub t_end: f64,
    pub dt: f64,
    pub drift: Drift,
    pub x0: InitialCondition,
    pub paths: usize,
    pub record_every: u64,
    pub noise_substeps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            t_end: 10.0,
            dt: 1e-3,
            drift: Drift::Cubic,
            x0: InitialCondition::Bump { u_amp: 1.0, w_amp: 0.5, center: 0.3, width: 0.25 },
            paths: 64,
            record_every: 100,
            noise_substeps: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoupleConfig {
    pub x_bar: InitialCondition,
    /// Rescale `x0 − x_bar` to this `H`-norm; `None` keeps `x0` as given.
    pub initial_gap: Option<f64>,
}

impl Default for CoupleConfig {
    fn default() -> Self {
        CoupleConfig { x_bar: InitialCondition::Zero, initial_gap: Some(1.0) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub ladder: Vec<f64>,
    pub t_end: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig { ladder: vec![0.2, 0.1, 0.05, 0.025], t_end: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentsConfig {
    pub t_end: f64,
    /// Start from zero rather than the run block's `x0`.
    pub from_zero: bool,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        MomentsConfig { t_end: 50.0, from_zero: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvariantBlock {
    /// Defaults to `5/ω` when absent.
    pub burn_in: Option<f64>,
    pub spacing: f64,
    pub time_samples: usize,
    /// Backward-start offsets for the pullback construction.
    pub ladder: Vec<f64>,
    /// Second start for the uniqueness test, at this `H`-norm.
    pub second_start_norm: f64,
    pub samples_per_path: usize,
}

impl Default for InvariantBlock {
    fn default() -> Self {
        InvariantBlock {
            burn_in: None,
            spacing: 5.0,
            time_samples: 256,
            ladder: vec![5.0, 10.0, 20.0, 40.0],
            second_start_norm: 5.0,
            samples_per_path: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearOracleConfig {
    pub burn_in: f64,
    pub average_time: f64,
    pub dt: f64,
    pub modes: usize,
}

impl Default for LinearOracleConfig {
    fn default() -> Self {
        LinearOracleConfig { burn_in: 30.0, average_time: 200.0, dt: 0.05, modes: 8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynkinConfig {
    /// `u`-channel modes of `h`, each with `coefficient`.
    pub h_modes: Vec<usize>,
    pub coefficient: f64,
    pub t: f64,
}

impl Default for DynkinConfig {
    fn default() -> Self {
        DynkinConfig { h_modes: vec![0, 1], coefficient: 0.5, t: 1.0 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub model: ModelParams,
    pub noise: NoiseConfig,
    pub run: RunConfig,
    pub couple: CoupleConfig,
    pub convergence: ConvergenceConfig,
    pub moments: MomentsConfig,
    pub invariant: InvariantBlock,
    pub linear_oracle: LinearOracleConfig,
    pub dynkin: DynkinConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.run.paths == 0 {
            return Err(CliError::Config("run.paths: must be at least 1".into()));
        }
        if self.run.record_every == 0 {
            return Err(CliError::Config("run.record_every: must be at least 1".into()));
        }
        if self.run.noise_substeps == 0 {
            return Err(CliError::Config("run.noise_substeps: must be at least 1".into()));
        }
        self.model.validate()?;
        self.noise.build(self.model.n_modes)?;
        if let Drift::Regularized { eps } = self.run.drift {
            if eps.is_nan() || eps < 0.0 {
                return Err(CliError::Config("run.drift.regularized.eps: must be ≥ 0".into()));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<(Model, NoiseSpec), CliError> {
        self.validate()?;
        let model = Model::new(self.model.clone())?;
        let spec = self.noise.build(model.n_modes())?;
        Ok((model, spec))
    }

    pub fn study(&self, t_end: f64) -> StudyConfig {
        StudyConfig {
            t_end,
            dt: self.run.dt,
            n_paths: self.run.paths,
            master_seed: self.master_seed,
            noise_substeps: self.run.noise_substeps,
            record_every: self.run.record_every,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = ExperimentConfig::from_json("{\n  \"run\": {\"pathz\": 3}\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("pathz") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn partial_blocks_keep_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"model": {"gamma": 0.7}, "run": {"paths": 3}}"#).unwrap();
        assert_eq!(cfg.model.gamma, 0.7);
        assert_eq!(cfg.model.n_modes, 32);
        assert_eq!(cfg.run.paths, 3);
    }

    #[test]
    fn zero_paths_fail_validation() {
        let mut cfg = ExperimentConfig::default();
        cfg.run.paths = 0;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn half_specified_tables_fail() {
        let cfg = ExperimentConfig::from_json(r#"{"noise": {"lambda1": [0.1]}}"#).unwrap();
        assert!(cfg.validate().is_err());
    }
}
