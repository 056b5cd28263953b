//! Exponential Euler–Maruyama integration of the truncated system.
//!
//! Each step treats the linear part and the stochastic convolution exactly
//! per mode and the nonlinearity explicitly through `φ₁`:
//!
//! ```text
//! x_{n+1} = e^{M dt} x_n + M⁻¹(e^{M dt} − I) N(x_n) + Σ_j e^{M h (s−1−j)} L_h z_j
//! ```
//!
//! where the step `dt` is split into `s` base noise intervals of length
//! `h = dt/s`. Normals are drawn per base interval from a counter-based
//! stream indexed by absolute time, so runs with different `dt` (same `h`)
//! or different start times share one Brownian path.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SfhnError};
use crate::linalg::{cholesky2_psd, expm2, phi1_scaled, Mat2, Vec2};
use crate::model::{Model, Profile, StateH};
use crate::noise::{mode_covariance, NoiseSpec, NoiseStream};
use crate::nonlinearity::{f, DriftParams};
use crate::stats::{log_linear_fit, mean_se, ols, MeanSe, OlsFit};

/// Which drift is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drift {
    /// `A x + F(x)` with the raw cubic.
    Cubic,
    /// `A x + F_{η,ε}(x) + η(u, 0)`, the Lipschitz approximation.
    Regularized { eps: f64 },
    /// `A_η x` alone: the Ornstein–Uhlenbeck case `F_η ≡ 0`.
    Linear,
}

impl Drift {
    /// Shift added to the `u` diagonal of the linear part.
    pub fn linear_shift(&self, eta: f64) -> f64 {
        match self {
            Drift::Linear => eta,
            _ => 0.0,
        }
    }
}

/// Ceiling on the step of the explicit cubic: `0.1 / (1 + max|u|²)`.
pub fn cubic_step_ceiling(max_u_sq: f64) -> f64 {
    0.1 / (1.0 + max_u_sq)
}

#[derive(Debug, Clone)]
struct ModePlan {
    m: Mat2,
    e_dt: Mat2,
    /// First column of `M⁻¹(e^{M dt} − I)`; the nonlinearity only acts on `u`.
    phi_col: Vec2,
    /// `e^{M h (s−1−j)} L_h` for each base interval `j` of a step.
    noise_maps: Vec<Mat2>,
}

/// Reusable buffers of one path.
#[derive(Debug, Clone)]
pub struct Workspace {
    grid: Vec<f64>,
    nonlin: Vec<f64>,
    normals: Vec<f64>,
    noise: StateH,
}

impl Workspace {
    pub fn new(model: &Model) -> Self {
        Workspace {
            grid: vec![0.0; model.n_grid()],
            nonlin: vec![0.0; model.n_modes()],
            normals: vec![0.0; 2 * model.n_modes()],
            noise: StateH::zeros(model.n_modes()),
        }
    }

    /// Noise contribution of the most recent step.
    pub fn last_noise(&self) -> &StateH {
        &self.noise
    }
}

/// Precomputed step operator for one `(drift, dt, substeps)` choice.
#[derive(Debug, Clone)]
pub struct Integrator<'a> {
    model: &'a Model,
    drift: Drift,
    dp: DriftParams,
    dt: f64,
    substeps: usize,
    h: f64,
    p_bar: f64,
    variable_p: bool,
    modes: Vec<ModePlan>,
    silent: bool,
}

impl<'a> Integrator<'a> {
    pub fn new(
        model: &'a Model,
        spec: &NoiseSpec,
        drift: Drift,
        dt: f64,
        substeps: usize,
    ) -> Result<Self> {
        spec.check_modes(model.n_modes())?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SfhnError::invalid("dt", format!("must be positive, got {dt}")));
        }
        if substeps == 0 {
            return Err(SfhnError::invalid("noise_substeps", "must be at least 1"));
        }
        let eps = match drift {
            Drift::Regularized { eps } => eps,
            _ => 0.0,
        };
        let dp = DriftParams::new(model.params().xi1, eps)?;
        let shift = drift.linear_shift(dp.eta());
        let p_bar = model.p_bar();
        let h = dt / substeps as f64;
        let mut modes = Vec::with_capacity(model.n_modes());
        for k in 0..model.n_modes() {
            let m = model.block(k, p_bar - shift);
            let e_dt = expm2(&m, dt);
            let phi = phi1_scaled(&m, dt).ok_or_else(|| {
                SfhnError::Internal(format!("mode matrix {k} is singular"))
            })?;
            let l_h = cholesky2_psd(&mode_covariance(&m, &spec.mode_q(k), h)?);
            let e_h = expm2(&m, h);
            let mut noise_maps = vec![Mat2::zeros(); substeps];
            let mut acc = l_h;
            for j in (0..substeps).rev() {
                noise_maps[j] = acc;
                acc = e_h * acc;
            }
            modes.push(ModePlan {
                m,
                e_dt,
                phi_col: phi.column(0).into(),
                noise_maps,
            });
        }
        Ok(Integrator {
            model,
            drift,
            dp,
            dt,
            substeps,
            h,
            p_bar,
            variable_p: model.p_constant().is_none(),
            modes,
            silent: spec.is_silent(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn base_interval(&self) -> f64 {
        self.h
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn drift(&self) -> Drift {
        self.drift
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    /// Absolute index of the base interval starting at time `t`.
    pub fn interval_index(&self, t: f64) -> Result<i64> {
        let r = t / self.h;
        let i = r.round();
        if (r - i).abs() > 1e-6 {
            return Err(SfhnError::invalid(
                "start_time",
                format!("{t} is not a multiple of the base noise interval {}", self.h),
            ));
        }
        Ok(i as i64)
    }

    /// Coefficients of the explicit term on the `u` channel, plus
    /// `max |u|²` on the grid.
    fn nonlinear(&self, u: &[f64], ws: &mut Workspace) -> f64 {
        let basis = self.model.basis();
        basis.synthesize(u, &mut ws.grid);
        let xi1 = self.dp.xi1();
        let eta = self.dp.eta();
        let p_grid = self.model.p_grid();
        let mut max_sq: f64 = 0.0;
        for (j, v) in ws.grid.iter_mut().enumerate() {
            let x = *v;
            max_sq = max_sq.max(x * x);
            let mut g = match self.drift {
                Drift::Cubic => f(x, xi1),
                Drift::Regularized { .. } => self.dp.f_eta_eps(x) + eta * x,
                Drift::Linear => 0.0,
            };
            if self.variable_p {
                g += (self.p_bar - p_grid[j]) * x;
            }
            *v = g;
        }
        basis.project(&ws.grid, &mut ws.nonlin);
        max_sq
    }

    fn has_explicit_term(&self) -> bool {
        self.variable_p || !matches!(self.drift, Drift::Linear)
    }

    /// Advances `x` by one step whose first base interval has absolute
    /// index `interval`. The noise part is left in `ws.last_noise()`.
    pub fn step(
        &self,
        x: &mut StateH,
        interval: i64,
        stream: &NoiseStream,
        ws: &mut Workspace,
    ) -> Result<()> {
        let n = self.model.n_modes();
        let explicit = self.has_explicit_term();
        let max_sq = if explicit { self.nonlinear(&x.u, ws) } else { 0.0 };

        let ceiling = cubic_step_ceiling(max_sq);
        if matches!(self.drift, Drift::Cubic) && self.dt > ceiling {
            self.substep_drift(x, ws, ceiling);
        } else {
            for k in 0..n {
                let plan = &self.modes[k];
                let mut y = plan.e_dt * Vec2::new(x.u[k], x.w[k]);
                if explicit {
                    y += plan.phi_col * ws.nonlin[k];
                }
                x.u[k] = y[0];
                x.w[k] = y[1];
            }
        }

        ws.noise.u.iter_mut().for_each(|v| *v = 0.0);
        ws.noise.w.iter_mut().for_each(|v| *v = 0.0);
        if !self.silent {
            for j in 0..self.substeps {
                stream.fill_normals(interval + j as i64, &mut ws.normals);
                for k in 0..n {
                    let z = Vec2::new(ws.normals[2 * k], ws.normals[2 * k + 1]);
                    let d = self.modes[k].noise_maps[j] * z;
                    ws.noise.u[k] += d[0];
                    ws.noise.w[k] += d[1];
                }
            }
            x.axpy(1.0, &ws.noise);
        }

        if !x.is_finite() {
            return Err(SfhnError::BlowUp {
                interval,
                time: interval as f64 * self.h,
            });
        }
        Ok(())
    }

    /// Deterministic part of a step split into pieces that respect the
    /// cubic ceiling, re-evaluated after every piece.
    fn substep_drift(&self, x: &mut StateH, ws: &mut Workspace, first_ceiling: f64) {
        let n = self.model.n_modes();
        let mut remaining = self.dt;
        let mut ceiling = first_ceiling;
        let mut first = true;
        while remaining > 0.0 {
            if !first {
                ceiling = cubic_step_ceiling(self.nonlinear(&x.u, ws));
            }
            first = false;
            let h = remaining.min(ceiling);
            for k in 0..n {
                let m = &self.modes[k].m;
                let e = expm2(m, h);
                let phi = phi1_scaled(m, h).expect("mode matrices are invertible");
                let y = e * Vec2::new(x.u[k], x.w[k]) + phi.column(0) * ws.nonlin[k];
                x.u[k] = y[0];
                x.w[k] = y[1];
            }
            if !x.is_finite() {
                return;
            }
            remaining -= h;
            if remaining < 1e-15 * self.dt {
                break;
            }
        }
    }

    /// Runs `n_steps` steps from `x0` at `start_time`, calling `observe`
    /// with the step count, time, state and (after the first call) the
    /// noise of the step just taken.
    pub fn run<F>(
        &self,
        x0: &StateH,
        start_time: f64,
        n_steps: u64,
        stream: &NoiseStream,
        mut observe: F,
    ) -> Result<StateH>
    where
        F: FnMut(u64, f64, &StateH, Option<&StateH>),
    {
        if x0.n_modes() != self.model.n_modes() {
            return Err(SfhnError::DimensionMismatch {
                expected: self.model.n_modes(),
                found: x0.n_modes(),
            });
        }
        let i0 = self.interval_index(start_time)?;
        let mut ws = Workspace::new(self.model);
        let mut x = x0.clone();
        observe(0, start_time, &x, None);
        for n in 0..n_steps {
            let interval = i0 + (n as i64) * self.substeps as i64;
            self.step(&mut x, interval, stream, &mut ws)?;
            let t = start_time + (n + 1) as f64 * self.dt;
            observe(n + 1, t, &x, Some(&ws.noise));
        }
        Ok(x)
    }
}

/// Number of steps of size `dt` in `horizon`; rejects non-multiples.
pub fn step_count(horizon: f64, dt: f64) -> Result<u64> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(SfhnError::invalid("t_end", format!("must be finite and ≥ 0, got {horizon}")));
    }
    if !(dt > 0.0) {
        return Err(SfhnError::invalid("dt", format!("must be positive, got {dt}")));
    }
    let r = horizon / dt;
    let n = r.round();
    if (r - n).abs() > 1e-6 {
        return Err(SfhnError::invalid(
            "t_end",
            format!("{horizon} is not an integer multiple of dt = {dt}"),
        ));
    }
    Ok(n as u64)
}

/// Built-in initial data, projected onto the truncated space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Zero,
    /// Spatially constant fields.
    Constant { u: f64, w: f64 },
    /// Raised-cosine bumps `amp·½(1 + cos(π(ξ − center)/width))` on
    /// `|ξ − center| < width`.
    Bump {
        u_amp: f64,
        w_amp: f64,
        center: f64,
        width: f64,
    },
    /// Grid values on a cell-centred grid of their own length.
    Grid { u: Vec<f64>, w: Vec<f64> },
    /// Spectral coefficients; shorter lists are padded with zeros.
    Spectral { u: Vec<f64>, w: Vec<f64> },
}

impl InitialCondition {
    pub fn to_state(&self, model: &Model) -> Result<StateH> {
        let n = model.n_modes();
        let grid = &model.basis().grid;
        let from_fn = |fu: &dyn Fn(f64) -> f64, fw: &dyn Fn(f64) -> f64| {
            let gu: Vec<f64> = grid.iter().map(|&x| fu(x)).collect();
            let gw: Vec<f64> = grid.iter().map(|&x| fw(x)).collect();
            model.from_grid(&gu, &gw)
        };
        let state = match self {
            InitialCondition::Zero => StateH::zeros(n),
            InitialCondition::Constant { u, w } => {
                let mut s = StateH::zeros(n);
                s.u[0] = *u;
                s.w[0] = *w;
                s
            }
            InitialCondition::Bump { u_amp, w_amp, center, width } => {
                if !(*width > 0.0) {
                    return Err(SfhnError::invalid("x0.width", "must be positive"));
                }
                let bump = |x: f64| {
                    let d = (x - center).abs();
                    if d < *width {
                        0.5 * (1.0 + (std::f64::consts::PI * d / width).cos())
                    } else {
                        0.0
                    }
                };
                from_fn(&|x| u_amp * bump(x), &|x| w_amp * bump(x))
            }
            InitialCondition::Grid { u, w } => {
                if u.is_empty() || w.is_empty() {
                    return Err(SfhnError::invalid("x0", "grid tables must be non-empty"));
                }
                let (pu, pw) = (Profile::Table(u.clone()), Profile::Table(w.clone()));
                from_fn(&|x| pu.eval(x), &|x| pw.eval(x))
            }
            InitialCondition::Spectral { u, w } => {
                if u.len() > n || w.len() > n {
                    return Err(SfhnError::invalid("x0", format!("more than {n} coefficients")));
                }
                let mut s = StateH::zeros(n);
                s.u[..u.len()].copy_from_slice(u);
                s.w[..w.len()].copy_from_slice(w);
                s
            }
        };
        if !state.is_finite() {
            return Err(SfhnError::invalid("x0", "initial condition is not finite"));
        }
        Ok(state)
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryConfig {
    pub t_end: f64,
    pub dt: f64,
    pub x0: StateH,
    pub drift: Drift,
    pub master_seed: u64,
    pub path_id: u64,
    pub record_every: u64,
    pub start_time: f64,
    pub noise_substeps: usize,
    pub keep_snapshots: bool,
}

impl TrajectoryConfig {
    pub fn new(x0: StateH, t_end: f64, dt: f64, drift: Drift) -> Self {
        TrajectoryConfig {
            t_end,
            dt,
            x0,
            drift,
            master_seed: 0,
            path_id: 0,
            record_every: 1,
            start_time: 0.0,
            noise_substeps: 1,
            keep_snapshots: false,
        }
    }

    pub fn validate(&self) -> Result<u64> {
        if self.record_every == 0 {
            return Err(SfhnError::invalid("record_every", "must be at least 1"));
        }
        if !self.start_time.is_finite() {
            return Err(SfhnError::invalid("start_time", "must be finite"));
        }
        step_count(self.t_end, self.dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub h_norms: Vec<f64>,
    pub v_norms: Vec<f64>,
    pub snapshots: Option<Vec<StateH>>,
    pub terminal: StateH,
}

impl TrajectoryRecord {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,norm_h,norm_v\n");
        for i in 0..self.times.len() {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e}\n",
                self.times[i], self.h_norms[i], self.v_norms[i]
            ));
        }
        out
    }
}

/// Integrates one path and records `|x|_H`, `‖x‖_V` every
/// `record_every` steps (and always at the final time).
pub fn integrate(model: &Model, spec: &NoiseSpec, cfg: &TrajectoryConfig) -> Result<TrajectoryRecord> {
    let n_steps = cfg.validate()?;
    let integ = Integrator::new(model, spec, cfg.drift, cfg.dt, cfg.noise_substeps)?;
    let stream = NoiseStream::new(cfg.master_seed, cfg.path_id);
    let mut rec = TrajectoryRecord {
        times: Vec::new(),
        h_norms: Vec::new(),
        v_norms: Vec::new(),
        snapshots: cfg.keep_snapshots.then(Vec::new),
        terminal: cfg.x0.clone(),
    };
    let terminal = integ.run(&cfg.x0, cfg.start_time, n_steps, &stream, |n, t, x, _| {
        if n % cfg.record_every == 0 || n == n_steps {
            rec.times.push(t);
            rec.h_norms.push(model.norm_h_sq(x).sqrt());
            rec.v_norms.push(model.norm_v_sq(x).map(f64::sqrt).unwrap_or(f64::NAN));
            if let Some(s) = rec.snapshots.as_mut() {
                s.push(x.clone());
            }
        }
    })?;
    rec.terminal = terminal;
    Ok(rec)
}

/// Runs `f(path)` for every path in parallel; results are ordered by path
/// index regardless of scheduling.
pub fn run_ensemble<T, F>(n_paths: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..n_paths as u64).into_par_iter().map(f).collect()
}

/// Shared settings of the multi-path studies below.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub t_end: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    pub noise_substeps: usize,
    pub record_every: u64,
}

impl StudyConfig {
    fn validate(&self) -> Result<u64> {
        if self.n_paths == 0 {
            return Err(SfhnError::invalid("paths", "must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(SfhnError::invalid("record_every", "must be at least 1"));
        }
        step_count(self.t_end, self.dt)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PairDistance {
    pub eps: f64,
    pub lambda: f64,
    /// `Ê sup_{t≤T} |X_ε − X_λ|²_H`.
    pub distance: MeanSe,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsConvergenceReport {
    pub ladder: Vec<f64>,
    /// `D(ε, ε/2)` for each ladder entry.
    pub halving: Vec<PairDistance>,
    /// `D(ε_i, ε_j)` for all ladder pairs `i < j`.
    pub ladder_pairs: Vec<PairDistance>,
    /// Fit of `log D(ε, ε/2)` against `log ε`.
    pub slope_fit: OlsFit,
    /// `D(ε, ε/2)` nonincreasing along the ladder within 2 SE.
    pub monotone_within_2se: bool,
    /// `Ê ∫₀ᵀ |f_{η,ε}(U_ε)|²_{L²} dt` per simulated ε.
    pub drift_energy: Vec<(f64, MeanSe)>,
}

/// Solves the regularized systems for every `ε` of the ladder and for
/// `ε/2`, all under one noise path per sample, and tabulates sup-distances.
pub fn eps_convergence_study(
    model: &Model,
    spec: &NoiseSpec,
    ladder: &[f64],
    x0: &StateH,
    study: &StudyConfig,
) -> Result<EpsConvergenceReport> {
    let n_steps = study.validate()?;
    if ladder.is_empty() || ladder.iter().any(|e| !(*e > 0.0)) {
        return Err(SfhnError::invalid("ladder", "needs positive eps values"));
    }
    let mut ladder = ladder.to_vec();
    ladder.sort_by(|a, b| b.total_cmp(a));
    ladder.dedup();
    let mut all: Vec<f64> = ladder.iter().flat_map(|&e| [e, 0.5 * e]).collect();
    all.sort_by(|a, b| b.total_cmp(a));
    all.dedup();
    let idx = |e: f64| all.iter().position(|&a| a == e).expect("eps in set");
    let integs: Vec<Integrator> = all
        .iter()
        .map(|&eps| Integrator::new(model, spec, Drift::Regularized { eps }, study.dt, study.noise_substeps))
        .collect::<Result<_>>()?;
    let mut pairs: Vec<(usize, usize)> = ladder.iter().map(|&e| (idx(e), idx(0.5 * e))).collect();
    for i in 0..ladder.len() {
        for j in (i + 1)..ladder.len() {
            pairs.push((idx(ladder[i]), idx(ladder[j])));
        }
    }
    let dps: Vec<DriftParams> = all
        .iter()
        .map(|&e| DriftParams::new(model.params().xi1, e))
        .collect::<Result<_>>()?;

    struct PathOut {
        sups: Vec<f64>,
        energy: Vec<f64>,
    }
    let per_path = run_ensemble(study.n_paths, |path| {
        let stream = NoiseStream::new(study.master_seed, path);
        let mut xs = vec![x0.clone(); all.len()];
        let mut wss: Vec<Workspace> = (0..all.len()).map(|_| Workspace::new(model)).collect();
        let mut sups = vec![0.0_f64; pairs.len()];
        let mut energy = vec![0.0; all.len()];
        let mut grid = vec![0.0; model.n_grid()];
        let w = model.basis().weight();
        for n in 0..n_steps {
            for (e, x) in xs.iter().enumerate() {
                model.basis().synthesize(&x.u, &mut grid);
                let l2: f64 = grid.iter().map(|&v| dps[e].f_eta_eps(v).powi(2)).sum::<f64>() * w;
                energy[e] += l2 * study.dt;
            }
            let interval = (n as i64) * study.noise_substeps as i64;
            for (e, x) in xs.iter_mut().enumerate() {
                integs[e].step(x, interval, &stream, &mut wss[e])?;
            }
            for (p, &(a, b)) in pairs.iter().enumerate() {
                sups[p] = sups[p].max(model.norm_h_sq(&xs[a].sub(&xs[b])));
            }
        }
        Ok(PathOut { sups, energy })
    })?;

    let dist = |p: usize| mean_se(&per_path.iter().map(|o| o.sups[p]).collect::<Vec<_>>());
    let mk = |p: usize| PairDistance {
        eps: all[pairs[p].0],
        lambda: all[pairs[p].1],
        distance: dist(p),
    };
    let halving: Vec<PairDistance> = (0..ladder.len()).map(mk).collect();
    let ladder_pairs: Vec<PairDistance> = (ladder.len()..pairs.len()).map(mk).collect();
    let (lx, ly): (Vec<f64>, Vec<f64>) = halving
        .iter()
        .map(|p| (p.eps.ln(), p.distance.mean.ln()))
        .unzip();
    let slope_fit = if halving.len() >= 2 {
        ols(&lx, &ly)
    } else {
        OlsFit { slope: f64::NAN, intercept: f64::NAN, r2: f64::NAN }
    };
    // ladder sorted descending, so D should not grow along it
    let monotone_within_2se = halving.windows(2).all(|w| {
        let (a, b) = (&w[0].distance, &w[1].distance);
        b.mean <= a.mean + 2.0 * (a.se * a.se + b.se * b.se).sqrt()
    });
    let drift_energy = all
        .iter()
        .enumerate()
        .map(|(e, &eps)| (eps, mean_se(&per_path.iter().map(|o| o.energy[e]).collect::<Vec<_>>())))
        .collect();
    Ok(EpsConvergenceReport {
        ladder,
        halving,
        ladder_pairs,
        slope_fit,
        monotone_within_2se,
        drift_energy,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingReport {
    pub times: Vec<f64>,
    pub initial_gap: f64,
    /// `|Δ(t)|²_H` per path at the recorded times.
    pub gaps: Vec<Vec<f64>>,
    /// `max_{path,t} |Δ(t)|² / (e^{−2ωt}|Δ(0)|²)`.
    pub max_envelope_ratio: f64,
    /// Largest increase of `|Δ|²` between consecutive records (relative).
    pub max_relative_increase: f64,
    /// Per-path decay exponents `−d log|Δ|²/dt` fitted on `[T/4, 3T/4]`.
    pub path_fits: Vec<OlsFit>,
    pub min_exponent: f64,
    pub min_r2: f64,
    pub omega: f64,
}

/// Runs `X(t, x)` and `X(t, x̄)` under identical noise and records the
/// squared `H`-distance.
pub fn coupled_run(
    model: &Model,
    spec: &NoiseSpec,
    x: &StateH,
    x_bar: &StateH,
    drift: Drift,
    study: &StudyConfig,
) -> Result<CouplingReport> {
    let n_steps = study.validate()?;
    let integ = Integrator::new(model, spec, drift, study.dt, study.noise_substeps)?;
    let gap0 = model.norm_h_sq(&x.sub(x_bar));
    let mut times = Vec::new();
    for n in 0..=n_steps {
        if n % study.record_every == 0 || n == n_steps {
            times.push(n as f64 * study.dt);
        }
    }
    let gaps = run_ensemble(study.n_paths, |path| {
        let stream = NoiseStream::new(study.master_seed, path);
        let (mut a, mut b) = (x.clone(), x_bar.clone());
        let (mut wa, mut wb) = (Workspace::new(model), Workspace::new(model));
        let mut out = vec![gap0];
        for n in 0..n_steps {
            let interval = (n as i64) * study.noise_substeps as i64;
            integ.step(&mut a, interval, &stream, &mut wa)?;
            integ.step(&mut b, interval, &stream, &mut wb)?;
            if (n + 1) % study.record_every == 0 || n + 1 == n_steps {
                out.push(model.norm_h_sq(&a.sub(&b)));
            }
        }
        Ok(out)
    })?;
    let omega = model.derived().omega;
    let mut max_ratio: f64 = 0.0;
    let mut max_inc: f64 = 0.0;
    for g in &gaps {
        for (i, (&t, &d)) in times.iter().zip(g).enumerate() {
            if gap0 > 0.0 {
                max_ratio = max_ratio.max(d / ((-2.0 * omega * t).exp() * gap0));
            }
            if i > 0 && g[i - 1] > 0.0 {
                max_inc = max_inc.max(d / g[i - 1] - 1.0);
            }
        }
    }
    let t_end = study.t_end;
    let path_fits: Vec<OlsFit> = gaps
        .iter()
        .filter_map(|g| log_linear_fit(&times, g, 0.25 * t_end, 0.75 * t_end))
        .map(|f| OlsFit { slope: -f.slope, ..f })
        .collect();
    let min_exponent = path_fits.iter().map(|f| f.slope).fold(f64::INFINITY, f64::min);
    let min_r2 = path_fits.iter().map(|f| f.r2).fold(f64::INFINITY, f64::min);
    Ok(CouplingReport {
        times,
        initial_gap: gap0,
        gaps,
        max_envelope_ratio: max_ratio,
        max_relative_increase: max_inc,
        path_fits,
        min_exponent,
        min_r2,
        omega,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BackwardReport {
    pub ladder: Vec<f64>,
    /// `X_λ(0, x₀)` per path (outer) and ladder entry (inner).
    #[serde(skip)]
    pub states: Vec<Vec<StateH>>,
    /// `Ê|X_λ(0)|²_H` per ladder entry.
    pub second_moments: Vec<MeanSe>,
    /// `Ê|X_{λ_max}(0) − X_γ(0)|²_H` for every `γ < λ_max`.
    pub distances_to_longest: Vec<(f64, MeanSe)>,
    /// All pairs `(γ, λ, Ê|X_λ(0) − X_γ(0)|²_H)` with `γ < λ`.
    pub pairwise: Vec<(f64, f64, MeanSe)>,
    /// Fit of `log D(γ)` against `γ`; `rate = −slope`.
    pub decay_fit: Option<OlsFit>,
    /// `e^{−2ωλ}|x₀|² + Tr_H(Q_H)/(2ω)` per ladder entry.
    pub moment_bound: Vec<f64>,
    /// Smallest constant `C` with `Ê|X_λ(0)|² ≤ e^{−2ωλ}|x₀|² + C`.
    pub fitted_constant: f64,
}

/// Starts the system at times `−λ` for each `λ` of the ladder and reads
/// the states at time 0, reusing one noise path per sample.
pub fn backward_run(
    model: &Model,
    spec: &NoiseSpec,
    ladder: &[f64],
    x0: &StateH,
    drift: Drift,
    study: &StudyConfig,
) -> Result<BackwardReport> {
    if study.n_paths == 0 {
        return Err(SfhnError::invalid("paths", "must be at least 1"));
    }
    let mut ladder = ladder.to_vec();
    ladder.sort_by(f64::total_cmp);
    ladder.dedup();
    if ladder.is_empty() || ladder[0] < 0.0 {
        return Err(SfhnError::invalid("ladder", "needs nonnegative start offsets"));
    }
    let steps: Vec<u64> = ladder.iter().map(|&l| step_count(l, study.dt)).collect::<Result<_>>()?;
    let integ = Integrator::new(model, spec, drift, study.dt, study.noise_substeps)?;
    let states = run_ensemble(study.n_paths, |path| {
        let stream = NoiseStream::new(study.master_seed, path);
        ladder
            .iter()
            .zip(&steps)
            .map(|(&l, &n)| integ.run(x0, -l, n, &stream, |_, _, _, _| {}))
            .collect::<Result<Vec<StateH>>>()
    })?;
    let nl = ladder.len();
    let second_moments: Vec<MeanSe> = (0..nl)
        .map(|i| mean_se(&states.iter().map(|s| model.norm_h_sq(&s[i])).collect::<Vec<_>>()))
        .collect();
    let pair = |i: usize, j: usize| {
        mean_se(
            &states
                .iter()
                .map(|s| model.norm_h_sq(&s[j].sub(&s[i])))
                .collect::<Vec<_>>(),
        )
    };
    let mut pairwise = Vec::new();
    for i in 0..nl {
        for j in (i + 1)..nl {
            pairwise.push((ladder[i], ladder[j], pair(i, j)));
        }
    }
    let distances_to_longest: Vec<(f64, MeanSe)> =
        (0..nl.saturating_sub(1)).map(|i| (ladder[i], pair(i, nl - 1))).collect();
    let decay_fit = if distances_to_longest.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = distances_to_longest
            .iter()
            .filter(|(_, d)| d.mean > 0.0)
            .map(|(g, d)| (*g, d.mean.ln()))
            .unzip();
        (xs.len() >= 2).then(|| ols(&xs, &ys))
    } else {
        None
    };
    let omega = model.derived().omega;
    let x_sq = model.norm_h_sq(x0);
    let stationary = spec.trace_h(model.gamma()) / (2.0 * omega);
    let moment_bound: Vec<f64> = ladder
        .iter()
        .map(|&l| (-2.0 * omega * l).exp() * x_sq + stationary)
        .collect();
    let fitted_constant = ladder
        .iter()
        .zip(&second_moments)
        .map(|(&l, m)| m.mean - (-2.0 * omega * l).exp() * x_sq)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BackwardReport {
        ladder,
        states,
        second_moments,
        distances_to_longest,
        pairwise,
        decay_fit,
        moment_bound,
        fitted_constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Channel, ModelParams};

    fn small_model() -> Model {
        Model::new(ModelParams::default().with_modes(8, 16)).unwrap()
    }

    fn bump(model: &Model) -> StateH {
        InitialCondition::Bump { u_amp: 1.2, w_amp: 0.3, center: 0.3, width: 0.25 }
            .to_state(model)
            .unwrap()
    }

    #[test]
    fn linear_silent_step_is_matrix_exponential() {
        let m = small_model();
        let spec = NoiseSpec::silent(8);
        let x0 = bump(&m);
        let integ = Integrator::new(&m, &spec, Drift::Linear, 0.25, 1).unwrap();
        let x1 = integ.run(&x0, 0.0, 4, &NoiseStream::new(0, 0), |_, _, _, _| {}).unwrap();
        for k in 0..8 {
            let mk = m.mode_matrix_shifted(k, m.derived().eta).unwrap();
            let y = (mk * 1.0).exp() * Vec2::new(x0.u[k], x0.w[k]);
            assert!((y[0] - x1.u[k]).abs() < 1e-10 && (y[1] - x1.w[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_state_is_preserved_without_noise() {
        let m = small_model();
        let spec = NoiseSpec::silent(8);
        let cfg = TrajectoryConfig::new(StateH::zeros(8), 2.0, 0.01, Drift::Cubic);
        let rec = integrate(&m, &spec, &cfg).unwrap();
        assert!(rec.h_norms.iter().all(|&v| v == 0.0));
        assert_eq!(rec.terminal, StateH::zeros(8));
    }

    #[test]
    fn zero_horizon_records_initial_state_only() {
        let m = small_model();
        let spec = NoiseSpec::power_law(8, 0.01, 1.0).unwrap();
        let cfg = TrajectoryConfig::new(bump(&m), 0.0, 0.01, Drift::Cubic);
        let rec = integrate(&m, &spec, &cfg).unwrap();
        assert_eq!(rec.times, vec![0.0]);
        assert_eq!(rec.terminal, cfg.x0);
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let m = small_model();
        let spec = NoiseSpec::power_law(8, 0.01, 1.0).unwrap();
        let mut cfg = TrajectoryConfig::new(bump(&m), 1.0, 0.01, Drift::Cubic);
        cfg.master_seed = 99;
        cfg.path_id = 4;
        let a = integrate(&m, &spec, &cfg).unwrap();
        let b = integrate(&m, &spec, &cfg).unwrap();
        assert_eq!(a, b);
        cfg.path_id = 5;
        let c = integrate(&m, &spec, &cfg).unwrap();
        assert_ne!(a.terminal, c.terminal);
    }

    #[test]
    fn rejects_bad_configs() {
        let m = small_model();
        let spec = NoiseSpec::silent(8);
        let mut cfg = TrajectoryConfig::new(StateH::zeros(8), 1.0, 0.3, Drift::Cubic);
        assert!(integrate(&m, &spec, &cfg).is_err());
        cfg.dt = 0.1;
        cfg.record_every = 0;
        assert!(integrate(&m, &spec, &cfg).is_err());
        cfg.record_every = 1;
        cfg.start_time = 0.05;
        cfg.noise_substeps = 1;
        assert!(integrate(&m, &spec, &cfg).is_err());
        let wrong = NoiseSpec::silent(4);
        assert!(integrate(&m, &wrong, &TrajectoryConfig::new(StateH::zeros(8), 1.0, 0.1, Drift::Cubic)).is_err());
    }

    #[test]
    fn deterministic_self_convergence_is_first_order() {
        let m = small_model();
        let spec = NoiseSpec::silent(8);
        let x0 = bump(&m);
        let t = 1.0;
        let run = |dt: f64| {
            let cfg = TrajectoryConfig::new(x0.clone(), t, dt, Drift::Cubic);
            integrate(&m, &spec, &cfg).unwrap().terminal
        };
        // Order one shows once dt·|μ_max| < 1; coarser steps sit in the stiff
        // pre-asymptotic range where the observed order is lower.
        let dts = [1e-3, 5e-4, 2.5e-4];
        let reference = run(dts[2] / 16.0);
        let errs: Vec<f64> = dts.iter().map(|&dt| m.norm_h_sq(&run(dt).sub(&reference)).sqrt()).collect();
        let fit = ols(
            &dts.iter().map(|d| d.ln()).collect::<Vec<_>>(),
            &errs.iter().map(|e| e.ln()).collect::<Vec<_>>(),
        );
        assert!(fit.slope >= 1.0 - 0.05, "order {} errs {errs:?}", fit.slope);
    }

    #[test]
    fn substeps_share_the_brownian_path() {
        // With the linear drift and a constant-p model the exact scheme is
        // exact in law and pathwise on the base grid: one step of 2h with
        // two noise substeps equals two steps of h.
        let m = small_model();
        let spec = NoiseSpec::power_law(8, 0.01, 1.0).unwrap();
        let x0 = bump(&m);
        let stream = NoiseStream::new(3, 1);
        let coarse = Integrator::new(&m, &spec, Drift::Linear, 0.02, 2).unwrap();
        let fine = Integrator::new(&m, &spec, Drift::Linear, 0.01, 1).unwrap();
        let a = coarse.run(&x0, -1.0, 50, &stream, |_, _, _, _| {}).unwrap();
        let b = fine.run(&x0, -1.0, 100, &stream, |_, _, _, _| {}).unwrap();
        assert!(m.norm_h_sq(&a.sub(&b)).sqrt() < 1e-13);
    }

    #[test]
    fn adaptive_ceiling_keeps_large_data_stable() {
        let m = small_model();
        let spec = NoiseSpec::silent(8);
        let x0 = StateH::unit(8, 0, Channel::U, 30.0);
        let cfg = TrajectoryConfig::new(x0, 0.5, 0.05, Drift::Cubic);
        let rec = integrate(&m, &spec, &cfg).unwrap();
        assert!(rec.terminal.is_finite());
        // constant fields follow the scalar ODE u' = −pu + f(u) − w; the
        // cubic pulls u back towards O(1) values quickly
        assert!(rec.terminal.u[0].abs() < 2.0);
    }

    #[test]
    fn eps_ladder_trivial_pair_is_zero() {
        let m = small_model();
        let spec = NoiseSpec::power_law(8, 0.01, 1.0).unwrap();
        let study = StudyConfig {
            t_end: 0.2,
            dt: 0.01,
            n_paths: 4,
            master_seed: 1,
            noise_substeps: 1,
            record_every: 1,
        };
        let rep = eps_convergence_study(&m, &spec, &[0.2, 0.1], &bump(&m), &study).unwrap();
        assert_eq!(rep.halving.len(), 2);
        // (0.2, 0.1) also appears as a ladder pair and must agree exactly
        let direct = rep.ladder_pairs[0].distance.mean;
        assert_eq!(rep.halving[0].distance.mean, direct);
        assert!(rep.halving.iter().all(|p| p.distance.mean > 0.0));
    }

    #[test]
    fn coupling_of_equal_states_is_zero() {
        let m = small_model();
        let spec = NoiseSpec::power_law(8, 0.01, 1.0).unwrap();
        let study = StudyConfig {
            t_end: 0.5,
            dt: 0.01,
            n_paths: 2,
            master_seed: 1,
            noise_substeps: 1,
            record_every: 10,
        };
        let x = bump(&m);
        let rep = coupled_run(&m, &spec, &x, &x, Drift::Cubic, &study).unwrap();
        assert!(rep.gaps.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_run_with_equal_offsets_has_zero_distance() {
        let m = small_model();
        let spec = NoiseSpec::power_law(8, 0.01, 1.0).unwrap();
        let study = StudyConfig {
            t_end: 0.0,
            dt: 0.01,
            n_paths: 2,
            master_seed: 1,
            noise_substeps: 1,
            record_every: 1,
        };
        let rep = backward_run(&m, &spec, &[0.5, 0.5, 1.0], &bump(&m), Drift::Cubic, &study).unwrap();
        assert_eq!(rep.ladder, vec![0.5, 1.0]);
        // paths at −0.5 and −1.0 see the same noise on [−0.5, 0]
        assert!(rep.pairwise[0].2.mean > 0.0);
        let same = backward_run(&m, &spec, &[0.5], &bump(&m), Drift::Cubic, &study).unwrap();
        assert_eq!(same.states[0][0], rep.states[0][0]);
    }

    #[test]
    fn initial_conditions_project() {
        let m = small_model();
        let c = InitialCondition::Constant { u: 2.0, w: -1.0 }.to_state(&m).unwrap();
        assert_eq!(c.u[0], 2.0);
        let g = InitialCondition::Grid { u: vec![2.0; 5], w: vec![-1.0; 3] }.to_state(&m).unwrap();
        assert!((g.u[0] - 2.0).abs() < 1e-14 && (g.w[0] + 1.0).abs() < 1e-14);
        assert!(g.u[1..].iter().all(|v| v.abs() < 1e-14));
        let json = r#"{"kind":"bump","u_amp":1.0,"w_amp":0.0,"center":0.5,"width":0.2}"#;
        let b: InitialCondition = serde_json::from_str(json).unwrap();
        assert!(b.to_state(&m).unwrap().u[0] > 0.0);
        assert!(InitialCondition::Spectral { u: vec![0.0; 9], w: vec![] }.to_state(&m).is_err());
    }

    #[test]
    fn drift_serde_names() {
        assert_eq!(serde_json::to_string(&Drift::Cubic).unwrap(), "\"cubic\"");
        let r: Drift = serde_json::from_str(r#"{"regularized":{"eps":0.1}}"#).unwrap();
        assert_eq!(r, Drift::Regularized { eps: 0.1 });
    }
}
