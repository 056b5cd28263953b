//! The twelve acceptance criteria, each a self-contained Monte Carlo or
//! oracle check at the default parameters. `quick` shrinks path counts and
//! horizons for smoke runs; only the full sizes are meant to pass reliably.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sfhn::ergodics::{
    estimate_moments, flatness, linear_covariance_time_average, transition_semigroup, two_start_ks,
    SamplingPlan, TestFunction,
};
use sfhn::kolmogorov::{dynkin_residual, random_states, CylinderFunction};
use sfhn::noise::{convolution_trace_integral, convolution_trace_quadrature, NoiseSpec};
use sfhn::nonlinearity::{f, f_prime, monotonicity_gap, DriftParams};
use sfhn::solver::{backward_run, coupled_run, eps_convergence_study, Drift, StudyConfig};
use sfhn::{Channel, Model, StateH};

use crate::experiments::{self, Experiment};
use crate::{with_workers, CliError, ExperimentConfig};

pub const CRITERIA: [(u32, &str); 12] = [
    (1, "drift identities"),
    (2, "monotonicity"),
    (3, "operator dissipativity"),
    (4, "trace diagnostics"),
    (5, "linear Gaussian oracle"),
    (6, "pathwise contraction"),
    (7, "eps-convergence"),
    (8, "moment bound"),
    (9, "invariant-measure construction"),
    (10, "semigroup limit"),
    (11, "Dynkin identity"),
    (12, "reproducibility"),
];

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub summary: String,
    pub seconds: f64,
    pub details: Value,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] C{:<2} {:<32} {} ({:.1}s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.summary,
            self.seconds
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AcceptanceReport {
    pub quick: bool,
    pub all_pass: bool,
    pub criteria: Vec<CriterionResult>,
}

struct Outcome {
    pass: bool,
    summary: String,
    details: Value,
}

fn seed(id: u32) -> u64 {
    1000 + id as u64
}

fn default_setup() -> Result<(Model, NoiseSpec), CliError> {
    ExperimentConfig::default().build()
}

/// The default bump initial condition rescaled to `|x|_H = norm`.
fn bump(model: &Model, norm: f64) -> Result<StateH, CliError> {
    let x = ExperimentConfig::default().run.x0.to_state(model)?;
    Ok(x.scaled(norm / model.norm_h_sq(&x).sqrt()))
}

fn study(t_end: f64, dt: f64, n_paths: usize, master_seed: u64, record_every: u64) -> StudyConfig {
    StudyConfig { t_end, dt, n_paths, master_seed, noise_substeps: 1, record_every }
}

/// Maximum of a unimodal `g` on `[a, b]`.
fn golden_max(g: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    while b - a > 1e-12 {
        if g(c) > g(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    g(0.5 * (a + b))
}

fn c1(quick: bool) -> Result<Outcome, CliError> {
    let n_u = if quick { 100_000 } else { 1_000_000 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed(1));
    let mut worst_identity = 0.0f64;
    let mut worst_max = 0.0f64;
    for _ in 0..20 {
        let xi1: f64 = rng.random_range(0.01..0.99);
        let dp = DriftParams::new(xi1, 0.0)?;
        for _ in 0..n_u {
            let u: f64 = rng.random_range(-50.0..50.0);
            let lhs = f(u, xi1) - dp.eta() * u;
            let err = (lhs - dp.f_eta_factored(u)).abs() / (1.0 + u.abs().powi(3));
            worst_identity = worst_identity.max(err);
        }
        let m = golden_max(|u| f_prime(u, xi1), -5.0, 5.0);
        worst_max = worst_max.max((m - dp.eta()).abs());
    }
    Ok(Outcome {
        pass: worst_identity <= 1e-12 && worst_max <= 1e-8,
        summary: format!("identity err {worst_identity:.2e} (≤1e-12), |max f' − η| {worst_max:.2e} (≤1e-8)"),
        details: json!({"samples_per_xi1": n_u, "max_identity_error": worst_identity, "max_fprime_error": worst_max}),
    })
}

fn c2(_quick: bool) -> Result<Outcome, CliError> {
    let (model, _) = default_setup()?;
    let dp = DriftParams::new(model.params().xi1, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed(2));
    let xs = random_states(&model, 10_000, 5.0, &mut rng);
    let ys = random_states(&model, 10_000, 5.0, &mut rng);
    let mut worst_pair = f64::NEG_INFINITY;
    for (x, y) in xs.iter().zip(&ys) {
        let gap = monotonicity_gap(&model, x, y, &dp);
        worst_pair = worst_pair.max(gap / (1.0 + model.norm_h_sq(&x.sub(y))));
    }
    let eps_grid = [0.0, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0];
    let mut worst_slope = f64::NEG_INFINITY;
    for &eps in &eps_grid {
        let de = dp.with_eps(eps)?;
        for i in 0..=40_000 {
            let u = -20.0 + i as f64 * 1e-3;
            worst_slope = worst_slope.max(de.f_eta_eps_prime(u));
        }
    }
    Ok(Outcome {
        pass: worst_pair <= 1e-9 && worst_slope <= 1e-12,
        summary: format!("max gap/(1+|x−y|²) {worst_pair:.2e} (≤1e-9), max f'_(η,ε) {worst_slope:.2e} (≤1e-12)"),
        details: json!({"pairs": xs.len(), "max_scaled_gap": worst_pair, "eps_grid": eps_grid, "max_f_eta_eps_prime": worst_slope}),
    })
}

fn c3(_quick: bool) -> Result<Outcome, CliError> {
    let (model, _) = default_setup()?;
    let d = *model.derived();
    let mut rng = ChaCha8Rng::seed_from_u64(seed(3));
    let (mut worst_h, mut worst_v) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    // unit vectors are the extremal directions; random states fill in
    let n = model.n_modes();
    let units = (0..n).flat_map(|k| [StateH::unit(n, k, Channel::U, 1.0), StateH::unit(n, k, Channel::W, 1.0)]);
    for x in units.chain(random_states(&model, 10_000, 10.0, &mut rng)) {
        let lhs = model.dot_h(&model.apply_a_eta(&x), &x);
        let h = d.omega1 * model.norm_h_sq(&x);
        let v = d.omega2 * model.norm_v_sq(&x)?;
        if h > 0.0 {
            worst_h = worst_h.max((lhs + h) / h);
            worst_v = worst_v.max((lhs + v) / v);
        }
    }
    Ok(Outcome {
        pass: worst_h <= 1e-9 && worst_v <= 1e-9,
        summary: format!("max (⟨A_η x,x⟩+ω₁|x|²)/ω₁|x|² {worst_h:.2e}, V-form {worst_v:.2e} (≤1e-9)"),
        details: json!({"states": 10_000 + 2 * n, "omega1": d.omega1, "omega2": d.omega2, "max_rel_h": worst_h, "max_rel_v": worst_v}),
    })
}

fn c4(_quick: bool) -> Result<Outcome, CliError> {
    let (model, spec) = default_setup()?;
    let horizon = 200.0;
    let closed = convolution_trace_integral(&model, &spec, horizon)?;
    let quad = convolution_trace_quadrature(&model, &spec, horizon)?;
    let stationary = convolution_trace_integral(&model, &spec, f64::INFINITY)?;
    let bound = spec.trace_h(model.gamma()) / (2.0 * model.derived().omega);
    let diff = (closed - quad).abs();
    let tail = (stationary - closed).abs();
    Ok(Outcome {
        pass: diff <= 1e-8 && tail <= 1e-8 && stationary <= bound,
        summary: format!(
            "|closed − quad| {diff:.2e}, |∞ − T| {tail:.2e} (≤1e-8); {stationary:.6} ≤ bound {bound:.6}"
        ),
        details: json!({"horizon": horizon, "closed_form": closed, "quadrature": quad, "stationary": stationary, "bound": bound}),
    })
}

fn c5(quick: bool) -> Result<Outcome, CliError> {
    let (model, spec) = default_setup()?;
    let (paths, avg) = if quick { (64, 100.0) } else { (256, 200.0) };
    let rep = linear_covariance_time_average(&model, &spec, 30.0, avg, 8, &study(0.0, 0.05, paths, seed(5), 1))?;
    let m0 = &rep.modes[0];
    Ok(Outcome {
        pass: rep.max_relative_error <= 0.05,
        summary: format!(
            "max relative error {:.3} over 8 modes (≤0.05); mode 0 target uu {:.6} empirical {:.6}",
            rep.max_relative_error, m0.target[0][0], m0.empirical[0][0]
        ),
        details: serde_json::to_value(&rep).map_err(|e| CliError::Numerics(e.to_string()))?,
    })
}

fn c6(quick: bool) -> Result<Outcome, CliError> {
    let (model, spec) = default_setup()?;
    let x = bump(&model, 1.0)?;
    let paths = if quick { 16 } else { 64 };
    let rep = coupled_run(&model, &spec, &x, &StateH::zeros(model.n_modes()), Drift::Cubic, &study(10.0, 1e-3, paths, seed(6), 100))?;
    let target = 0.8 * 2.0 * rep.omega;
    Ok(Outcome {
        pass: rep.max_envelope_ratio <= 1.05 && rep.min_exponent >= target && rep.min_r2 >= 0.95,
        summary: format!(
            "envelope ratio {:.3} (≤1.05), min exponent {:.3} (≥{target:.3}), min R² {:.3} (≥0.95)",
            rep.max_envelope_ratio, rep.min_exponent, rep.min_r2
        ),
        details: json!({"paths": paths, "omega": rep.omega, "max_envelope_ratio": rep.max_envelope_ratio,
            "min_exponent": rep.min_exponent, "min_r2": rep.min_r2, "max_relative_increase": rep.max_relative_increase}),
    })
}

fn c7(quick: bool) -> Result<Outcome, CliError> {
    let (model, spec) = default_setup()?;
    let x0 = bump(&model, 1.0)?;
    let paths = if quick { 16 } else { 64 };
    let ladder = [0.2, 0.1, 0.05, 0.025];
    let rep = eps_convergence_study(&model, &spec, &ladder, &x0, &study(1.0, 1e-3, paths, seed(7), 1))?;
    Ok(Outcome {
        pass: rep.slope_fit.slope >= 0.9,
        summary: format!(
            "log-log slope {:.3} (≥0.9), R² {:.4}, monotone {}",
            rep.slope_fit.slope, rep.slope_fit.r2, rep.monotone_within_2se
        ),
        details: serde_json::to_value(&rep).map_err(|e| CliError::Numerics(e.to_string()))?,
    })
}

fn c8(quick: bool) -> Result<Outcome, CliError> {
    let (model, spec) = default_setup()?;
    let (paths, t_end) = if quick { (32, 20.0) } else { (256, 50.0) };
    let x0 = StateH::zeros(model.n_modes());
    let a = estimate_moments(&model, &spec, Drift::Cubic, &x0, &study(t_end, 1e-3, paths, seed(8), 100))?;
    let b = estimate_moments(&model, &spec, Drift::Cubic, &x0, &study(t_end, 1e-3, paths, seed(8) + 1000, 100))?;
    let ratio = [a.envelope[0] / b.envelope[0], a.envelope[1] / b.envelope[1]];
    let combine = |k: usize| -> Vec<f64> {
        let (ca, cb) = if k == 0 { (&a.second, &b.second) } else { (&a.fourth, &b.fourth) };
        ca.iter().zip(cb).map(|(p, q)| 0.5 * (p.mean + q.mean)).collect()
    };
    let flat = [flatness(&a.times, &combine(0)), flatness(&a.times, &combine(1))];
    let reproducible = ratio.iter().all(|r| (r - 1.0).abs() <= 0.2);
    Ok(Outcome {
        pass: reproducible && flat[0] < 0.05,
        summary: format!(
            "C_m batch ratios {:.3}, {:.3} (±20%), flatness m=1 {:.3} (<0.05), m=2 {:.3}",
            ratio[0], ratio[1], flat[0], flat[1]
        ),
        details: json!({"paths_per_batch": paths, "t_end": t_end, "envelope_a": a.envelope, "envelope_b": b.envelope,
            "ratio": ratio, "flatness_combined": flat, "flatness_a": a.flatness, "flatness_b": b.flatness}),
    })
}

fn c9(quick: bool) -> Result<Outcome, CliError> {
    let (model, spec) = default_setup()?;
    let drift = Drift::Cubic;
    let x0 = bump(&model, 1.0)?;
    let paths = if quick { 16 } else { 64 };
    let ladder = [5.0, 10.0, 20.0, 40.0];
    let back = backward_run(&model, &spec, &ladder, &x0, drift, &study(0.0, 1e-3, paths, seed(9), 1))?;
    let (rate, r2) = back.decay_fit.map(|f| (-f.slope, f.r2)).unwrap_or((f64::NAN, f64::NAN));
    let plan = if quick {
        SamplingPlan { burn_in: 20.0, spacing: 5.0, samples_per_path: 5, n_paths: 8, dt: 1e-3, master_seed: seed(9) + 1000, noise_substeps: 1 }
    } else {
        SamplingPlan { burn_in: 100.0, spacing: 5.0, samples_per_path: 20, n_paths: 32, dt: 1e-3, master_seed: seed(9) + 1000, noise_substeps: 1 }
    };
    let far = bump(&model, 5.0)?;
    let ks = two_start_ks(&model, &spec, drift, &StateH::zeros(model.n_modes()), &far, &plan)?;
    Ok(Outcome {
        pass: rate > 0.0 && r2 >= 0.9 && ks.pass,
        summary: format!(
            "decay rate {rate:.3} (>0), R² {r2:.4} (≥0.9), two-start KS {:.3} (<{:.3})",
            ks.ks, ks.ks_critical
        ),
        details: json!({"backward": back, "two_start": ks}),
    })
}

fn c10(quick: bool) -> Result<Outcome, CliError> {
    let (model, spec) = default_setup()?;
    let n = model.n_modes();
    let (paths, t) = if quick { (16, 10.0) } else { (128, 40.0) };
    let mut h2 = StateH::unit(n, 1, Channel::U, 0.3);
    h2.w[0] = 0.3;
    let phis = [
        TestFunction::CylinderExp { h: StateH::unit(n, 0, Channel::U, 0.5) },
        TestFunction::CylinderExp { h: h2 },
        TestFunction::Ramp { scale: 0.2 },
    ];
    let x1 = StateH::zeros(n);
    let x2 = bump(&model, 5.0)?;
    let a = transition_semigroup(&model, &spec, Drift::Cubic, &phis, &x1, t, &study(t, 1e-3, paths, seed(10), 1))?;
    let b = transition_semigroup(&model, &spec, Drift::Cubic, &phis, &x2, t, &study(t, 1e-3, paths, seed(10) + 1000, 1))?;
    let z: Vec<f64> = a
        .iter()
        .zip(&b)
        .map(|(p, q)| {
            let se = (p.se * p.se + q.se * q.se).sqrt();
            if se > 0.0 { (p.mean - q.mean).abs() / se } else { f64::INFINITY }
        })
        .collect();
    Ok(Outcome {
        pass: z.iter().all(|z| *z <= 3.0),
        summary: format!("|ΔP_tφ|/SE = {:.2}, {:.2}, {:.2} (≤3) at t = {t}", z[0], z[1], z[2]),
        details: json!({"t": t, "paths_per_start": paths, "from_zero": a, "from_far": b, "z": z}),
    })
}

fn c11(quick: bool) -> Result<Outcome, CliError> {
    let (model, spec) = default_setup()?;
    let x = ExperimentConfig::default().run.x0.to_state(&model)?;
    let paths = if quick { 64 } else { 256 };
    let ou_cf = CylinderFunction::new(&model, &spec, &[(0, 0.5)], &[])?;
    let ou = dynkin_residual(&model, &spec, &ou_cf, &x, 1.0, Drift::Linear, &study(1.0, 1e-3, paths, seed(11), 1))?;
    let cf = CylinderFunction::new(&model, &spec, &[(0, 0.5), (1, 0.5)], &[])?;
    let mut coarse_study = study(1.0, 1e-3, paths, seed(11) + 1000, 1);
    coarse_study.noise_substeps = 2;
    let coarse = dynkin_residual(&model, &spec, &cf, &x, 1.0, Drift::Cubic, &coarse_study)?;
    let fine = dynkin_residual(&model, &spec, &cf, &x, 1.0, Drift::Cubic, &study(1.0, 5e-4, paths, seed(11) + 1000, 1))?;
    let ou_ok = ou.passes(3.0) && ou.matches_exact(3.0) == Some(true);
    let gap_ratio = coarse.quadrature_gap / fine.quadrature_gap;
    let (rc, rf) = (&coarse.residual_cv, &fine.residual_cv);
    let reduction = rf.mean.abs() <= rc.mean.abs() + 2.0 * (rc.se * rc.se + rf.se * rf.se).sqrt();
    let pass = ou_ok && coarse.passes(3.0) && fine.passes(3.0) && (1.5..=2.5).contains(&gap_ratio) && reduction;
    Ok(Outcome {
        pass,
        summary: format!(
            "OU {:.1e}±{:.1e}; cubic dt=1e-3 {:.1e}±{:.1e}, dt=5e-4 {:.1e}±{:.1e}; gap ratio {gap_ratio:.2}",
            ou.residual_cv.mean, ou.residual_cv.se, rc.mean, rc.se, rf.mean, rf.se
        ),
        details: json!({"x_norm_h": model.norm_h_sq(&x).sqrt(), "ou": ou, "cubic_dt_1e-3": coarse, "cubic_dt_5e-4": fine, "quadrature_gap_ratio": gap_ratio, "residual_reduced": reduction}),
    })
}

fn c12(quick: bool) -> Result<Outcome, CliError> {
    let mut cfg = ExperimentConfig { master_seed: seed(12), ..Default::default() };
    cfg.run.paths = 4;
    cfg.run.t_end = 1.0;
    cfg.convergence.t_end = 0.2;
    cfg.moments.t_end = 2.0;
    cfg.invariant.spacing = 1.0;
    cfg.invariant.time_samples = 8;
    cfg.invariant.samples_per_path = 2;
    cfg.invariant.ladder = vec![1.0, 2.0];
    cfg.linear_oracle.burn_in = 5.0;
    cfg.linear_oracle.average_time = 10.0;
    cfg.dynkin.t = 0.2;
    let mut exps = vec![Experiment::Eigen, Experiment::Simulate, Experiment::Couple, Experiment::Dynkin];
    if !quick {
        exps.extend([Experiment::Convergence, Experiment::Moments, Experiment::LinearOracle, Experiment::Invariant]);
    }
    let mut mismatched = Vec::new();
    let mut files = 0;
    for exp in &exps {
        let one = with_workers(Some(1), || experiments::run(*exp, &cfg))??;
        let four = with_workers(Some(4), || experiments::run(*exp, &cfg))??;
        files += one.len();
        if one != four {
            mismatched.push(exp.name());
        }
    }
    let names: Vec<&str> = exps.iter().map(|e| e.name()).collect();
    Ok(Outcome {
        pass: mismatched.is_empty(),
        summary: format!("{} subcommands, {files} artifacts, {} mismatched across 1 vs 4 workers", exps.len(), mismatched.len()),
        details: json!({"subcommands": names, "mismatched": mismatched}),
    })
}

/// Runs one criterion. Errors inside a criterion become a failing result.
pub fn run_criterion(id: u32, quick: bool) -> Result<CriterionResult, CliError> {
    let name = CRITERIA
        .iter()
        .find(|(i, _)| *i == id)
        .map(|(_, n)| n.to_string())
        .ok_or_else(|| CliError::Config(format!("no acceptance criterion {id} (expected 1..=12)")))?;
    let started = std::time::Instant::now();
    let run = match id {
        1 => c1,
        2 => c2,
        3 => c3,
        4 => c4,
        5 => c5,
        6 => c6,
        7 => c7,
        8 => c8,
        9 => c9,
        10 => c10,
        11 => c11,
        _ => c12,
    };
    let outcome = run(quick).unwrap_or_else(|e| Outcome {
        pass: false,
        summary: format!("error: {e}"),
        details: Value::Null,
    });
    Ok(CriterionResult {
        id,
        name,
        pass: outcome.pass,
        summary: outcome.summary,
        seconds: started.elapsed().as_secs_f64(),
        details: outcome.details,
    })
}

/// Runs the selected criteria (all when `only` is empty), calling
/// `progress` after each.
pub fn run_acceptance(
    quick: bool,
    only: &[u32],
    mut progress: impl FnMut(&CriterionResult),
) -> Result<AcceptanceReport, CliError> {
    let mut criteria = Vec::new();
    for (id, _) in CRITERIA {
        if only.is_empty() || only.contains(&id) {
            let r = run_criterion(id, quick)?;
            progress(&r);
            criteria.push(r);
        }
    }
    Ok(AcceptanceReport { quick, all_pass: criteria.iter().all(|c| c.pass), criteria })
}
