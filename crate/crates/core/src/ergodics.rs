//! Long-time behaviour: moment curves, the invariant measure and the
//! transition semigroup, with the exact Gaussian targets of the linear
//! case.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfhnError};
use crate::linalg::{lyapunov2, Mat2};
use crate::model::{Model, StateH};
use crate::noise::{weighted_trace, NoiseSpec, NoiseStream};
use crate::nonlinearity::{apply_f_eta, DriftParams};
use crate::solver::{run_ensemble, step_count, Drift, Integrator, StudyConfig};
use crate::stats::{
    ks_two_sample, ks_two_sample_critical, log_linear_fit, mean_se, Histogram, MeanSe, OlsFit,
};

#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub times: Vec<f64>,
    /// `Ê|X(t)|²_H` at the recorded times.
    pub second: Vec<MeanSe>,
    /// `Ê|X(t)|⁴_H` at the recorded times.
    pub fourth: Vec<MeanSe>,
    pub omega1: f64,
    pub x0_norm_sq: f64,
    /// Smallest `C_m` with `Ê|X(t)|^{2m} ≤ C_m(1 + e^{−mω₁t}|x₀|^{2m})` on
    /// the recorded grid, for `m = 1, 2`.
    pub envelope: [f64; 2],
    /// Relative change between the means over the two quarters of the
    /// last half of the horizon, for `m = 1, 2`.
    pub flatness: [f64; 2],
}

impl MomentReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,m2,m2_se,m4,m4_se\n");
        for i in 0..self.times.len() {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                self.times[i], self.second[i].mean, self.second[i].se, self.fourth[i].mean, self.fourth[i].se
            ));
        }
        out
    }

    /// Envelope constant of this curve with the initial term weighted by
    /// `e^{−mω₁t}`.
    fn fit_envelope(times: &[f64], curve: &[MeanSe], m: i32, omega1: f64, x0_sq: f64) -> f64 {
        times
            .iter()
            .zip(curve)
            .map(|(&t, c)| c.mean / (1.0 + (-(m as f64) * omega1 * t).exp() * x0_sq.powi(m)))
            .fold(0.0, f64::max)
    }
}

/// Relative drift `|ā₂ − ā₁| / ((ā₁ + ā₂)/2)` of a curve between
/// `[T/2, 3T/4)` and `[3T/4, T]`.
pub fn flatness(times: &[f64], values: &[f64]) -> f64 {
    let t_end = times.last().copied().unwrap_or(0.0);
    let window = |lo: f64, hi: f64, closed: bool| {
        let sel: Vec<f64> = times
            .iter()
            .zip(values)
            .filter(|(t, _)| **t >= lo && (**t < hi || (closed && **t <= hi)))
            .map(|(_, v)| *v)
            .collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    };
    let a = window(0.5 * t_end, 0.75 * t_end, false);
    let b = window(0.75 * t_end, t_end, true);
    (b - a).abs() / (0.5 * (a + b))
}

/// Ensemble curves `t ↦ Ê|X(t, x₀)|^{2m}_H` for `m = 1, 2`.
pub fn estimate_moments(
    model: &Model,
    spec: &NoiseSpec,
    drift: Drift,
    x0: &StateH,
    study: &StudyConfig,
) -> Result<MomentReport> {
    let n_steps = step_count(study.t_end, study.dt)?;
    if study.n_paths == 0 || study.record_every == 0 {
        return Err(SfhnError::invalid("paths/record_every", "must be at least 1"));
    }
    let integ = Integrator::new(model, spec, drift, study.dt, study.noise_substeps)?;
    let recorded = |n: u64| n.is_multiple_of(study.record_every) || n == n_steps;
    let times: Vec<f64> = (0..=n_steps).filter(|&n| recorded(n)).map(|n| n as f64 * study.dt).collect();
    let norms = run_ensemble(study.n_paths, |path| {
        let stream = NoiseStream::new(study.master_seed, path);
        let mut out = Vec::with_capacity(times.len());
        integ.run(x0, 0.0, n_steps, &stream, |n, _, x, _| {
            if recorded(n) {
                out.push(model.norm_h_sq(x));
            }
        })?;
        Ok(out)
    })?;
    let column = |i: usize, p: i32| mean_se(&norms.iter().map(|r| r[i].powi(p)).collect::<Vec<_>>());
    let second: Vec<MeanSe> = (0..times.len()).map(|i| column(i, 1)).collect();
    let fourth: Vec<MeanSe> = (0..times.len()).map(|i| column(i, 2)).collect();
    let omega1 = model.derived().omega1;
    let x0_sq = model.norm_h_sq(x0);
    let envelope = [
        MomentReport::fit_envelope(&times, &second, 1, omega1, x0_sq),
        MomentReport::fit_envelope(&times, &fourth, 2, omega1, x0_sq),
    ];
    let means = |c: &[MeanSe]| c.iter().map(|m| m.mean).collect::<Vec<_>>();
    let flat = [flatness(&times, &means(&second)), flatness(&times, &means(&fourth))];
    Ok(MomentReport {
        times,
        second,
        fourth,
        omega1,
        x0_norm_sq: x0_sq,
        envelope,
        flatness: flat,
    })
}

/// Exponent of the decaying part `c(t) − plateau` of a moment curve,
/// fitted on `[t_lo, t_hi]` over the points where it is positive.
pub fn transient_exponent(times: &[f64], curve: &[f64], plateau: f64, t_lo: f64, t_hi: f64) -> Option<OlsFit> {
    let excess: Vec<f64> = curve.iter().map(|c| c - plateau).collect();
    log_linear_fit(times, &excess, t_lo, t_hi).map(|f| OlsFit { slope: -f.slope, ..f })
}

/// Stationary covariances `Σ_k` of the linear system `dX = A_η X dt + dW`,
/// solving `M_k Σ + Σ M_kᵀ + Q_k = 0` per mode.
pub fn linear_invariant_covariance(model: &Model, spec: &NoiseSpec) -> Result<Vec<Mat2>> {
    spec.check_modes(model.n_modes())?;
    let eta = model.derived().eta;
    (0..model.n_modes())
        .map(|k| {
            let m = model.mode_matrix_shifted(k, eta)?;
            let q = spec.mode_q(k);
            if q.iter().all(|v| *v == 0.0) {
                return Ok(Mat2::zeros());
            }
            lyapunov2(&m, &q)
                .ok_or_else(|| SfhnError::Internal(format!("singular Lyapunov system in mode {k}")))
        })
        .collect()
}

/// `‖M Σ + Σ Mᵀ + Q‖_max`.
pub fn lyapunov_residual(m: &Mat2, sigma: &Mat2, q: &Mat2) -> f64 {
    (m * sigma + sigma * m.transpose() + q).abs().max()
}

/// `Σ_k (γΣ_uu + Σ_ww)`: the stationary `Ê|X|²_H` of the linear system.
pub fn linear_stationary_second_moment(gamma: f64, cov: &[Mat2]) -> f64 {
    cov.iter().map(|s| weighted_trace(gamma, s)).sum()
}

/// Stationary variance of `⟨x, h⟩_H` in the linear system:
/// `Σ_k g_kᵀ Σ_k g_k` with `g_k = (γh_u, h_w)`.
pub fn linear_projection_variance(gamma: f64, cov: &[Mat2], h: &StateH) -> f64 {
    cov.iter()
        .enumerate()
        .map(|(k, s)| {
            let g = crate::linalg::Vec2::new(gamma * h.u[k], h.w[k]);
            g.dot(&(s * g))
        })
        .sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeCovarianceCheck {
    pub mode: usize,
    /// Row-major `[[Σ_uu, Σ_uw], [Σ_wu, Σ_ww]]`.
    pub target: [[f64; 2]; 2],
    pub empirical: [[f64; 2]; 2],
    /// `‖Σ̂ − Σ‖_F / ‖Σ‖_F`.
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearOracleReport {
    pub modes: Vec<ModeCovarianceCheck>,
    pub max_relative_error: f64,
    /// Exact stationary `𝔼|X|²_H`.
    pub second_moment_target: f64,
    /// Per-path time averages of `|X|²_H`, pooled.
    pub second_moment: MeanSe,
    pub samples_per_path: u64,
}

/// Time-averaged second moments of the linear system (`F_η ≡ 0`) along
/// `n_paths` runs from zero, compared with the Lyapunov solutions on the
/// leading `n_check` modes. With constant `p` the linear integrator is
/// exact in law, so any step size may be used.
pub fn linear_covariance_time_average(
    model: &Model,
    spec: &NoiseSpec,
    burn_in: f64,
    average_time: f64,
    n_check: usize,
    study: &StudyConfig,
) -> Result<LinearOracleReport> {
    if study.n_paths == 0 {
        return Err(SfhnError::invalid("paths", "must be at least 1"));
    }
    if model.p_constant().is_none() {
        return Err(SfhnError::UnsupportedFastPath(
            "the linear oracle needs a constant p".into(),
        ));
    }
    let n_check = n_check.min(model.n_modes());
    let target = linear_invariant_covariance(model, spec)?;
    let burn = step_count(burn_in, study.dt)?;
    let avg = step_count(average_time, study.dt)?;
    if avg == 0 {
        return Err(SfhnError::invalid("average_time", "must cover at least one step"));
    }
    let integ = Integrator::new(model, spec, Drift::Linear, study.dt, study.noise_substeps)?;
    let per_path = run_ensemble(study.n_paths, |path| {
        let stream = NoiseStream::new(study.master_seed, path);
        let mut sums = vec![[0.0; 3]; n_check];
        let mut norm = 0.0;
        integ.run(&StateH::zeros(model.n_modes()), 0.0, burn + avg, &stream, |n, _, x, _| {
            if n > burn {
                for (k, s) in sums.iter_mut().enumerate() {
                    s[0] += x.u[k] * x.u[k];
                    s[1] += x.u[k] * x.w[k];
                    s[2] += x.w[k] * x.w[k];
                }
                norm += model.norm_h_sq(x);
            }
        })?;
        let inv = 1.0 / avg as f64;
        Ok((sums.into_iter().map(|s| s.map(|v| v * inv)).collect::<Vec<_>>(), norm * inv))
    })?;
    let np = study.n_paths as f64;
    let modes: Vec<ModeCovarianceCheck> = (0..n_check)
        .map(|k| {
            let mut e = [0.0; 3];
            for (sums, _) in &per_path {
                for i in 0..3 {
                    e[i] += sums[k][i] / np;
                }
            }
            let empirical = Mat2::new(e[0], e[1], e[1], e[2]);
            let t = target[k];
            ModeCovarianceCheck {
                mode: k,
                target: rows(&t),
                empirical: rows(&empirical),
                relative_error: (empirical - t).norm() / t.norm(),
            }
        })
        .collect();
    let max_relative_error = modes.iter().map(|m| m.relative_error).fold(0.0, f64::max);
    Ok(LinearOracleReport {
        max_relative_error,
        modes,
        second_moment_target: linear_stationary_second_moment(model.gamma(), &target),
        second_moment: mean_se(&per_path.iter().map(|(_, n)| *n).collect::<Vec<_>>()),
        samples_per_path: avg,
    })
}

fn rows(m: &Mat2) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

/// Scalar observables histogrammed by the invariant-measure estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    NormH,
    NormV,
    /// `⟨x, h⟩_H`.
    Inner(StateH),
}

impl Functional {
    pub fn eval(&self, model: &Model, x: &StateH) -> f64 {
        match self {
            Functional::NormH => model.norm_h_sq(x).sqrt(),
            Functional::NormV => model.norm_v_sq(x).map(f64::sqrt).unwrap_or(f64::NAN),
            Functional::Inner(h) => model.dot_h(x, h),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Functional::NormH => "norm_h",
            Functional::NormV => "norm_v",
            Functional::Inner(_) => "inner_h",
        }
    }
}

/// How states are drawn from a run: after `burn_in`, every `spacing`
/// time units, `samples_per_path` times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub burn_in: f64,
    pub spacing: f64,
    pub samples_per_path: usize,
    pub n_paths: usize,
    pub dt: f64,
    pub master_seed: u64,
    pub noise_substeps: usize,
}

/// Samples states along `n_paths` runs from `x0`, path-major. Path ids
/// start at `first_path`.
pub fn sample_states(
    model: &Model,
    spec: &NoiseSpec,
    drift: Drift,
    x0: &StateH,
    plan: &SamplingPlan,
    first_path: u64,
) -> Result<Vec<StateH>> {
    if plan.n_paths == 0 || plan.samples_per_path == 0 {
        return Err(SfhnError::invalid("paths", "need at least one path and one sample"));
    }
    let burn = step_count(plan.burn_in, plan.dt)?;
    let gap = step_count(plan.spacing, plan.dt)?;
    if plan.samples_per_path > 1 && gap == 0 {
        return Err(SfhnError::invalid("spacing", "must be positive for several samples per path"));
    }
    let integ = Integrator::new(model, spec, drift, plan.dt, plan.noise_substeps)?;
    let per_path = run_ensemble(plan.n_paths, |i| {
        let stream = NoiseStream::new(plan.master_seed, first_path + i);
        let mut out = Vec::with_capacity(plan.samples_per_path);
        let total = burn + gap * (plan.samples_per_path as u64 - 1);
        integ.run(x0, 0.0, total, &stream, |n, _, x, _| {
            if n >= burn && (n - burn) % gap.max(1) == 0 && out.len() < plan.samples_per_path {
                out.push(x.clone());
            }
        })?;
        Ok(out)
    })?;
    Ok(per_path.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionalComparison {
    pub name: String,
    pub time_average: Histogram,
    pub ensemble: Histogram,
    pub time_mean: MeanSe,
    pub ensemble_mean: MeanSe,
    pub ks: f64,
    pub ks_critical: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalMeasure {
    pub burn_in: f64,
    pub spacing: f64,
    pub time_samples: usize,
    pub ensemble_samples: usize,
    pub functionals: Vec<FunctionalComparison>,
    #[serde(skip)]
    pub time_states: Vec<StateH>,
    #[serde(skip)]
    pub ensemble_states: Vec<StateH>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantConfig {
    pub burn_in: f64,
    /// Spacing of the time-average samples along the long run.
    pub spacing: f64,
    pub time_samples: usize,
    pub ensemble_paths: usize,
    pub dt: f64,
    pub master_seed: u64,
    pub noise_substeps: usize,
}

/// Compares the time average along one long run (path 0, sampled every
/// `spacing` after burn-in) with the ensemble at time `burn_in` over paths
/// `1..=ensemble_paths`, by two-sample KS tests on each functional.
pub fn estimate_invariant_measure(
    model: &Model,
    spec: &NoiseSpec,
    drift: Drift,
    x0: &StateH,
    cfg: &InvariantConfig,
    functionals: &[Functional],
) -> Result<EmpiricalMeasure> {
    let omega = model.derived().omega;
    if cfg.burn_in < 5.0 / omega - 1e-9 {
        return Err(SfhnError::invalid(
            "burn_in",
            format!("must be at least 5/ω = {}", 5.0 / omega),
        ));
    }
    let long = SamplingPlan {
        burn_in: cfg.burn_in,
        spacing: cfg.spacing,
        samples_per_path: cfg.time_samples,
        n_paths: 1,
        dt: cfg.dt,
        master_seed: cfg.master_seed,
        noise_substeps: cfg.noise_substeps,
    };
    let ens = SamplingPlan { samples_per_path: 1, n_paths: cfg.ensemble_paths, ..long.clone() };
    let time_states = sample_states(model, spec, drift, x0, &long, 0)?;
    let ensemble_states = sample_states(model, spec, drift, x0, &ens, 1)?;
    let comparisons = functionals
        .iter()
        .map(|fun| {
            let a: Vec<f64> = time_states.iter().map(|x| fun.eval(model, x)).collect();
            let b: Vec<f64> = ensemble_states.iter().map(|x| fun.eval(model, x)).collect();
            let ks = ks_two_sample(&a, &b);
            let crit = ks_two_sample_critical(a.len(), b.len());
            FunctionalComparison {
                name: fun.name().to_string(),
                time_average: Histogram::freedman_diaconis(&a),
                ensemble: Histogram::freedman_diaconis(&b),
                time_mean: mean_se(&a),
                ensemble_mean: mean_se(&b),
                ks,
                ks_critical: crit,
                pass: ks < crit,
            }
        })
        .collect();
    Ok(EmpiricalMeasure {
        burn_in: cfg.burn_in,
        spacing: cfg.spacing,
        time_samples: time_states.len(),
        ensemble_samples: ensemble_states.len(),
        functionals: comparisons,
        time_states,
        ensemble_states,
    })
}

/// Two-start uniqueness evidence: KS distance of `|x|_H` between samples
/// drawn from two initial conditions.
#[derive(Debug, Clone, Serialize)]
pub struct TwoStartTest {
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: MeanSe,
    pub mean_b: MeanSe,
    pub ks: f64,
    pub ks_critical: f64,
    pub pass: bool,
}

pub fn two_start_ks(
    model: &Model,
    spec: &NoiseSpec,
    drift: Drift,
    x_a: &StateH,
    x_b: &StateH,
    plan: &SamplingPlan,
) -> Result<TwoStartTest> {
    let a = sample_states(model, spec, drift, x_a, plan, 0)?;
    let b = sample_states(model, spec, drift, x_b, plan, plan.n_paths as u64)?;
    let na: Vec<f64> = a.iter().map(|x| model.norm_h_sq(x).sqrt()).collect();
    let nb: Vec<f64> = b.iter().map(|x| model.norm_h_sq(x).sqrt()).collect();
    let ks = ks_two_sample(&na, &nb);
    let crit = ks_two_sample_critical(na.len(), nb.len());
    Ok(TwoStartTest {
        n_a: na.len(),
        n_b: nb.len(),
        mean_a: mean_se(&na),
        mean_b: mean_se(&nb),
        ks,
        ks_critical: crit,
        pass: ks < crit,
    })
}

/// Test functions for `P_tφ(x) = 𝔼φ(X(t, x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `exp(⟨x, h⟩_H)`.
    CylinderExp { h: StateH },
    /// `min(|x|_H / scale, 1)`.
    Ramp { scale: f64 },
    Constant { value: f64 },
}

impl TestFunction {
    pub fn eval(&self, model: &Model, x: &StateH) -> f64 {
        match self {
            TestFunction::CylinderExp { h } => model.dot_h(x, h).exp(),
            TestFunction::Ramp { scale } => (model.norm_h_sq(x).sqrt() / scale).min(1.0),
            TestFunction::Constant { value } => *value,
        }
    }
}

/// Monte Carlo `P_tφ(x)` for several test functions on shared paths.
pub fn transition_semigroup(
    model: &Model,
    spec: &NoiseSpec,
    drift: Drift,
    phis: &[TestFunction],
    x: &StateH,
    t: f64,
    study: &StudyConfig,
) -> Result<Vec<MeanSe>> {
    if study.n_paths == 0 {
        return Err(SfhnError::invalid("paths", "must be at least 1"));
    }
    let n_steps = step_count(t, study.dt)?;
    let integ = Integrator::new(model, spec, drift, study.dt, study.noise_substeps)?;
    let terminal = run_ensemble(study.n_paths, |path| {
        integ.run(x, 0.0, n_steps, &NoiseStream::new(study.master_seed, path), |_, _, _, _| {})
    })?;
    Ok(phis
        .iter()
        .map(|phi| mean_se(&terminal.iter().map(|s| phi.eval(model, s)).collect::<Vec<_>>()))
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentIntegral {
    pub m: u32,
    /// Sample mean of `|x|^{2m}_H`.
    pub moment: MeanSe,
    /// Sample mean of `|F_η(x)|²_H`.
    pub f_eta_sq: MeanSe,
}

/// Moments of the empirical measure given by `samples`.
pub fn invariant_moment_integral(model: &Model, samples: &[StateH], m: u32) -> Result<MomentIntegral> {
    if m == 0 {
        return Err(SfhnError::invalid("m", "must be at least 1"));
    }
    let dp = DriftParams::new(model.params().xi1, 0.0)?;
    let moment: Vec<f64> = samples.iter().map(|x| model.norm_h_sq(x).powi(m as i32)).collect();
    let fe: Vec<f64> = samples
        .iter()
        .map(|x| model.norm_h_sq(&apply_f_eta(model, x, &dp)))
        .collect();
    Ok(MomentIntegral { m, moment: mean_se(&moment), f_eta_sq: mean_se(&fe) })
}
