//! Cylindrical exponentials `φ(x) = exp(⟨x, h⟩_H)`, the Kolmogorov
//! operator on them, and Monte Carlo checks of the Dynkin identity
//!
//! ```text
//! 𝔼φ(X(t, x)) = φ(x) + 𝔼∫₀ᵗ N₀φ(X(s, x)) ds.
//! ```
//!
//! Derivatives are `H`-gradients: `Dφ = φ·h`, `D²φ = φ·h⊗h`, so
//! `Tr[Q D²φ] = φ·⟨Q_H h, h⟩_H`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Result, SfhnError};
use crate::linalg::{expm2, Vec2};
use crate::model::{Channel, Model, StateH};
use crate::noise::{mode_covariance, NoiseSpec, NoiseStream};
use crate::nonlinearity::{apply_f, apply_f_eta_eps, DriftParams};
use crate::solver::{run_ensemble, step_count, Drift, Integrator, StudyConfig};
use crate::stats::{mean_se, ols, MeanSe};

/// Paths whose `⟨x, h⟩_H` exceeds this are rejected: `exp` overflows
/// shortly above 709.
pub const LOG_PHI_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CylinderFunction {
    pub h: StateH,
    /// `⟨Q_H h, h⟩_H`.
    pub q_form: f64,
}

impl CylinderFunction {
    /// Direction from sparse `(mode, coefficient)` lists per channel.
    pub fn new(model: &Model, spec: &NoiseSpec, h_u: &[(usize, f64)], h_w: &[(usize, f64)]) -> Result<Self> {
        let n = model.n_modes();
        let mut h = StateH::zeros(n);
        for (list, channel) in [(h_u, Channel::U), (h_w, Channel::W)] {
            for &(k, c) in list {
                if k >= n {
                    return Err(SfhnError::invalid("h", format!("mode {k} outside 0..{n}")));
                }
                if !c.is_finite() {
                    return Err(SfhnError::invalid("h", "coefficients must be finite"));
                }
                match channel {
                    Channel::U => h.u[k] += c,
                    Channel::W => h.w[k] += c,
                }
            }
        }
        Self::from_state(model, spec, h)
    }

    pub fn from_state(model: &Model, spec: &NoiseSpec, h: StateH) -> Result<Self> {
        spec.check_modes(model.n_modes())?;
        if h.n_modes() != model.n_modes() {
            return Err(SfhnError::DimensionMismatch { expected: model.n_modes(), found: h.n_modes() });
        }
        let q_form = spec.quadratic_form_h(model.gamma(), &h);
        Ok(CylinderFunction { h, q_form })
    }

    pub fn scaled(&self, a: f64) -> Self {
        CylinderFunction { h: self.h.scaled(a), q_form: a * a * self.q_form }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiValue {
    pub value: f64,
    /// `⟨x, h⟩_H`, finite even when `value` overflows.
    pub log: f64,
}

pub fn phi_eval(model: &Model, cf: &CylinderFunction, x: &StateH) -> PhiValue {
    let log = model.dot_h(x, &cf.h);
    PhiValue { value: log.exp(), log }
}

/// `H`-gradient `Dφ(x) = φ(x)·h`.
pub fn phi_gradient(model: &Model, cf: &CylinderFunction, x: &StateH) -> StateH {
    cf.h.scaled(phi_eval(model, cf, x).value)
}

/// Linear part `A_D` and nonlinearity `F_D` of a drift: the raw cubic
/// pairs `A` with `F`; the other drifts pair `A_η` with `F_{η,ε}` (zero for
/// the linear case).
fn drift_shift(model: &Model, drift: Drift) -> f64 {
    match drift {
        Drift::Cubic => 0.0,
        _ => model.derived().eta,
    }
}

fn drift_nonlinearity(model: &Model, drift: Drift, x: &StateH) -> Result<Option<StateH>> {
    Ok(match drift {
        Drift::Cubic => Some(apply_f(model, x)),
        Drift::Regularized { eps } => {
            let dp = DriftParams::new(model.params().xi1, eps)?;
            Some(apply_f_eta_eps(model, x, &dp))
        }
        Drift::Linear => None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct N0Value {
    pub phi: f64,
    /// `φ·(½⟨Q_H h, h⟩_H + ⟨A_D x, h⟩_H)`.
    pub l_part: f64,
    /// `φ·⟨F_D(x), h⟩_H`.
    pub f_part: f64,
    pub total: f64,
}

/// `N₀φ(x) = ½Tr[Q D²φ] + ⟨A_D x, Dφ⟩_H + ⟨F_D(x), Dφ⟩_H`.
pub fn apply_n0(model: &Model, cf: &CylinderFunction, x: &StateH, drift: Drift) -> Result<N0Value> {
    let phi = phi_eval(model, cf, x).value;
    let ax = model.apply_a_shifted(x, drift_shift(model, drift));
    let l_part = phi * (0.5 * cf.q_form + model.dot_h(&ax, &cf.h));
    let f_part = match drift_nonlinearity(model, drift, x)? {
        Some(fx) => phi * model.dot_h(&fx, &cf.h),
        None => 0.0,
    };
    Ok(N0Value { phi, l_part, f_part, total: l_part + f_part })
}

/// Closed-form `𝔼φ(X(t, x))` for `dX = A_η X dt + dW`:
/// `exp(Σ_k g_kᵀ e^{tM_k} x_k + ½ Σ_k g_kᵀ Σ_k(t) g_k)`, `g_k = (γh_u, h_w)`.
/// Returns the logarithm.
pub fn ou_log_expectation(model: &Model, spec: &NoiseSpec, cf: &CylinderFunction, x: &StateH, t: f64) -> Result<f64> {
    spec.check_modes(model.n_modes())?;
    let eta = model.derived().eta;
    let gamma = model.gamma();
    let mut mean = 0.0;
    let mut var = 0.0;
    for k in 0..model.n_modes() {
        let g = Vec2::new(gamma * cf.h.u[k], cf.h.w[k]);
        if g == Vec2::zeros() {
            continue;
        }
        let m = model.mode_matrix_shifted(k, eta)?;
        mean += g.dot(&(expm2(&m, t) * Vec2::new(x.u[k], x.w[k])));
        var += g.dot(&(mode_covariance(&m, &spec.mode_q(k), t)? * g));
    }
    Ok(mean + 0.5 * var)
}

#[derive(Debug, Clone, Serialize)]
pub struct DynkinReport {
    pub t: f64,
    pub dt: f64,
    pub drift: Drift,
    pub phi_x: f64,
    /// `Êφ(X_t)`.
    pub terminal: MeanSe,
    /// `Ê∫₀ᵗ N₀φ(X_s) ds` by the trapezoid rule on the step grid.
    pub integral: MeanSe,
    /// Per-path `φ(X_t) − φ(x) − ∫N₀φ ds`.
    pub residual: MeanSe,
    /// The same with the discrete martingale `Σ φ(X_n)⟨h, ΔW_n⟩_H`
    /// subtracted; it has mean zero, so only the variance changes.
    pub residual_cv: MeanSe,
    /// `|Ê(trapezoid − left Riemann sum)|`, an O(dt) indicator of the
    /// quadrature error in the time integral.
    pub quadrature_gap: f64,
    pub rejected_paths: usize,
    pub accepted_paths: usize,
    /// Closed-form `𝔼φ(X_t)` when the drift is linear and `p` constant.
    pub exact_terminal: Option<f64>,
}

impl DynkinReport {
    /// `|residual| ≤ k·SE`, using the control-variated estimate.
    pub fn passes(&self, k: f64) -> bool {
        self.residual_cv.mean.abs() <= k * self.residual_cv.se
    }

    /// `|Êφ(X_t) − 𝔼φ(X_t)| ≤ k·SE` against the closed form.
    pub fn matches_exact(&self, k: f64) -> Option<bool> {
        self.exact_terminal
            .map(|e| (self.terminal.mean - e).abs() <= k * self.terminal.se)
    }
}

/// Monte Carlo residual of the Dynkin identity along simulated paths.
pub fn dynkin_residual(
    model: &Model,
    spec: &NoiseSpec,
    cf: &CylinderFunction,
    x: &StateH,
    t: f64,
    drift: Drift,
    study: &StudyConfig,
) -> Result<DynkinReport> {
    if study.n_paths == 0 {
        return Err(SfhnError::invalid("paths", "must be at least 1"));
    }
    let n_steps = step_count(t, study.dt)?;
    let integ = Integrator::new(model, spec, drift, study.dt, study.noise_substeps)?;
    let dt = study.dt;

    struct PathOut {
        terminal: f64,
        integral: f64,
        martingale: f64,
        quad_gap: f64,
    }
    let outcomes = run_ensemble(study.n_paths, |path| {
        let stream = NoiseStream::new(study.master_seed, path);
        let mut trap = 0.0;
        let mut left = 0.0;
        let mut mart = 0.0;
        let mut prev_n0 = 0.0;
        let mut prev_phi = 0.0;
        let mut rejected = false;
        let mut failure = None;
        let terminal = integ.run(x, 0.0, n_steps, &stream, |n, _, xs, noise| {
            if rejected || failure.is_some() {
                return;
            }
            let pv = phi_eval(model, cf, xs);
            if pv.log > LOG_PHI_LIMIT {
                rejected = true;
                return;
            }
            let n0 = match apply_n0(model, cf, xs, drift) {
                Ok(v) => v.total,
                Err(e) => {
                    failure = Some(e);
                    return;
                }
            };
            if n > 0 {
                trap += 0.5 * dt * (prev_n0 + n0);
                left += dt * prev_n0;
                if let Some(dw) = noise {
                    mart += prev_phi * model.dot_h(&cf.h, dw);
                }
            }
            prev_n0 = n0;
            prev_phi = pv.value;
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        if rejected || !trap.is_finite() {
            return Ok(None);
        }
        Ok(Some(PathOut {
            terminal: phi_eval(model, cf, &terminal).value,
            integral: trap,
            martingale: mart,
            quad_gap: trap - left,
        }))
    })?;

    let accepted: Vec<PathOut> = outcomes.into_iter().flatten().collect();
    let rejected_paths = study.n_paths - accepted.len();
    let phi_x = phi_eval(model, cf, x).value;
    let col = |f: &dyn Fn(&PathOut) -> f64| mean_se(&accepted.iter().map(f).collect::<Vec<_>>());
    let exact_terminal = match drift {
        Drift::Linear if model.p_constant().is_some() => Some(ou_log_expectation(model, spec, cf, x, t)?.exp()),
        _ => None,
    };
    Ok(DynkinReport {
        t,
        dt,
        drift,
        phi_x,
        terminal: col(&|o| o.terminal),
        integral: col(&|o| o.integral),
        residual: col(&|o| o.terminal - phi_x - o.integral),
        residual_cv: col(&|o| o.terminal - phi_x - o.integral - o.martingale),
        quadrature_gap: col(&|o| o.quad_gap).mean.abs(),
        rejected_paths,
        accepted_paths: accepted.len(),
        exact_terminal,
    })
}

/// Random states with `|x|_H` uniform on `[0, max_norm]` and directions
/// from Gaussian coefficients with variance `(1 + k)^{−2}`.
pub fn random_states<R: Rng + ?Sized>(model: &Model, n: usize, max_norm: f64, rng: &mut R) -> Vec<StateH> {
    let modes = model.n_modes();
    (0..n)
        .map(|_| {
            let mut x = StateH::zeros(modes);
            for k in 0..modes {
                let s = 1.0 / (1.0 + k as f64);
                x.u[k] = s * rng.sample::<f64, _>(StandardNormal);
                x.w[k] = s * rng.sample::<f64, _>(StandardNormal);
            }
            let norm = model.norm_h_sq(&x).sqrt();
            let target = max_norm * rng.random::<f64>();
            x.scaled(if norm > 0.0 { target / norm } else { 0.0 })
        })
        .collect()
}

/// `|Lψ(x)|` for the unit-modulus exponential `ψ(x) = e^{i⟨x,h⟩_H}`:
/// `Lψ = ψ·(−½⟨Q_H h, h⟩_H + i⟨A_D x, h⟩_H)`.
pub fn l_modulus(model: &Model, cf: &CylinderFunction, x: &StateH, drift: Drift) -> f64 {
    let ax = model.apply_a_shifted(x, drift_shift(model, drift));
    (0.5 * cf.q_form).hypot(model.dot_h(&ax, &cf.h))
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthFit {
    /// Analytic constants `a = ½⟨Q_H h, h⟩_H`, `b = |A_D* h|_H`.
    pub a_analytic: f64,
    pub b_analytic: f64,
    /// Least-squares slope with the intercept raised to cover the sample.
    pub a_fit: f64,
    pub b_fit: f64,
    /// `max (|Lψ| − a − b|x|)` for the analytic constants (≤ 0 expected).
    pub max_violation_analytic: f64,
    /// The same for the fitted constants on the fitting sample (≤ 0 up
    /// to rounding).
    pub max_violation_fit: f64,
}

impl GrowthFit {
    /// Largest violation of the fitted envelope on a fresh sample.
    pub fn violation_on(&self, model: &Model, cf: &CylinderFunction, xs: &[StateH], drift: Drift) -> f64 {
        xs.iter()
            .map(|x| l_modulus(model, cf, x, drift) - self.a_fit - self.b_fit * model.norm_h_sq(x).sqrt())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Fits `|Lψ(x)| ≤ a + b|x|_H` on a sample and compares with the analytic
/// constants.
pub fn linear_growth_check_l(model: &Model, cf: &CylinderFunction, samples: &[StateH], drift: Drift) -> Result<GrowthFit> {
    if samples.len() < 2 {
        return Err(SfhnError::invalid("samples", "need at least two states"));
    }
    let shift = drift_shift(model, drift);
    let a_analytic = 0.5 * cf.q_form;
    let b_analytic = model.norm_h_sq(&model.apply_a_adjoint_shifted(&cf.h, shift)).sqrt();
    let norms: Vec<f64> = samples.iter().map(|x| model.norm_h_sq(x).sqrt()).collect();
    let vals: Vec<f64> = samples.iter().map(|x| l_modulus(model, cf, x, drift)).collect();
    let b_fit = if vals.iter().all(|v| *v == 0.0) {
        0.0
    } else {
        ols(&norms, &vals).slope.max(0.0)
    };
    let a_fit = norms
        .iter()
        .zip(&vals)
        .map(|(n, v)| v - b_fit * n)
        .fold(0.0, f64::max);
    let violation = |a: f64, b: f64| {
        norms
            .iter()
            .zip(&vals)
            .map(|(n, v)| v - a - b * n)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    Ok(GrowthFit {
        a_analytic,
        b_analytic,
        a_fit,
        b_fit,
        max_violation_analytic: violation(a_analytic, b_analytic),
        max_violation_fit: violation(a_fit, b_fit),
    })
}
