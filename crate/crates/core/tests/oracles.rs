// Monte Carlo checks against closed-form or independently computed targets.

use sfhn::ergodics::{
    estimate_invariant_measure, estimate_moments, invariant_moment_integral, linear_invariant_covariance,
    linear_projection_variance, linear_stationary_second_moment, sample_states, transient_exponent, Functional,
    InvariantConfig, SamplingPlan,
};
use sfhn::kolmogorov::{dynkin_residual, linear_growth_check_l, random_states, CylinderFunction};
use sfhn::noise::{convolution_sup_statistics, NoiseSpec};
use sfhn::solver::{backward_run, coupled_run, integrate, Drift, InitialCondition, StudyConfig, TrajectoryConfig};
use sfhn::stats::{ks_normal, ks_one_sample_critical, mean_se, ols};
use sfhn::{Channel, Model, ModelParams, StateH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup() -> (Model, NoiseSpec) {
    let model = Model::new(ModelParams::default()).unwrap();
    let spec = NoiseSpec::power_law(model.n_modes(), 0.01, 1.0).unwrap();
    (model, spec)
}

fn bump(model: &Model, norm: f64) -> StateH {
    let x = InitialCondition::Bump { u_amp: 1.0, w_amp: 0.5, center: 0.3, width: 0.25 }
        .to_state(model)
        .unwrap();
    x.scaled(norm / model.norm_h_sq(&x).sqrt())
}

fn study(t_end: f64, dt: f64, n_paths: usize, seed: u64) -> StudyConfig {
    StudyConfig { t_end, dt, n_paths, master_seed: seed, noise_substeps: 1, record_every: 10 }
}

#[test]
fn sup_statistic_is_stable_across_seeds() {
    let (model, spec) = setup();
    let stats: Vec<_> = (0..5)
        .map(|s| convolution_sup_statistics(&model, &spec, 25.0, 0.01, 128, 300 + s).unwrap())
        .collect();
    let m1: Vec<_> = stats.iter().map(|s| s.moments[0].mean).collect();
    for i in 0..m1.len() {
        let others: Vec<f64> = (0..m1.len()).filter(|j| *j != i).map(|j| m1[j].mean).collect();
        let pooled = mean_se(&others);
        let se_others = (m1.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, m)| m.se * m.se).sum::<f64>()).sqrt()
            / others.len() as f64;
        let z = (m1[i].mean - pooled.mean).abs() / (m1[i].se.powi(2) + se_others.powi(2)).sqrt();
        assert!(z <= 3.0, "seed {i}: z = {z}");
    }
}

#[test]
fn sup_statistic_grows_like_log_horizon() {
    // a stationary Gaussian process has E sup² ~ 2σ² log(T/τ), so doubling
    // T from 25 to 50 raises it by about 20% here, not "within 10%"
    let (model, spec) = setup();
    let short = convolution_sup_statistics(&model, &spec, 25.0, 0.01, 256, 41).unwrap();
    let long = convolution_sup_statistics(&model, &spec, 50.0, 0.01, 256, 41).unwrap();
    let (a, b) = (short.moments[0].mean, long.moments[0].mean);
    assert!(b.mean >= a.mean, "sup over a longer window cannot shrink on shared paths");
    let ratio = b.mean / a.mean;
    assert!((1.1..1.35).contains(&ratio), "T=25: {a:?}, T=50: {b:?}");
}

#[test]
fn linear_second_moment_reaches_lyapunov_trace() {
    let (model, spec) = setup();
    let target = linear_stationary_second_moment(model.gamma(), &linear_invariant_covariance(&model, &spec).unwrap());
    let rep = estimate_moments(&model, &spec, Drift::Linear, &StateH::zeros(model.n_modes()), &study(20.0, 0.01, 512, 7))
        .unwrap();
    let last = rep.second.last().unwrap();
    assert!((last.mean - target).abs() <= 3.0 * last.se, "{last:?} vs {target}");
}

fn linear_samples(model: &Model, spec: &NoiseSpec, seed: u64) -> Vec<StateH> {
    let plan = SamplingPlan {
        burn_in: 20.0,
        spacing: 10.0,
        samples_per_path: 4,
        n_paths: 100,
        dt: 0.01,
        master_seed: seed,
        noise_substeps: 1,
    };
    sample_states(model, spec, Drift::Linear, &StateH::zeros(model.n_modes()), &plan, 0).unwrap()
}

#[test]
fn linear_projection_is_gaussian_with_lyapunov_variance() {
    let (model, spec) = setup();
    let cov = linear_invariant_covariance(&model, &spec).unwrap();
    let mut h = StateH::unit(model.n_modes(), 0, Channel::U, 0.5);
    h.w[1] = 0.5;
    let var = linear_projection_variance(model.gamma(), &cov, &h);
    let xs: Vec<f64> = linear_samples(&model, &spec, 11).iter().map(|x| model.dot_h(x, &h)).collect();
    let d = ks_normal(&xs, 0.0, var.sqrt());
    assert!(d < ks_one_sample_critical(xs.len()), "KS {d} with {} samples", xs.len());
}

#[test]
fn linear_moment_integral_matches_trace() {
    let (model, spec) = setup();
    let target = linear_stationary_second_moment(model.gamma(), &linear_invariant_covariance(&model, &spec).unwrap());
    let samples = linear_samples(&model, &spec, 12);
    let m1 = invariant_moment_integral(&model, &samples, 1).unwrap();
    assert!((m1.moment.mean - target).abs() <= 3.0 * m1.moment.se, "{:?} vs {target}", m1.moment);
    let m2 = invariant_moment_integral(&model, &samples, 2).unwrap();
    assert!(m2.moment.mean >= m1.moment.mean.powi(2));
}

#[test]
fn large_initial_data_decays_at_least_at_omega1() {
    let (model, spec) = setup();
    let omega1 = model.derived().omega1;
    let mut st = study(20.0, 1e-3, 32, 13);
    st.record_every = 100;
    let rep = estimate_moments(&model, &spec, Drift::Cubic, &bump(&model, 10.0), &st).unwrap();
    for (m, curve) in [(1.0, &rep.second), (2.0, &rep.fourth)] {
        let means: Vec<f64> = curve.iter().map(|c| c.mean).collect();
        let tail: Vec<f64> = rep.times.iter().zip(&means).filter(|(t, _)| **t >= 15.0).map(|(_, v)| *v).collect();
        let plateau = tail.iter().sum::<f64>() / tail.len() as f64;
        let fit = transient_exponent(&rep.times, &means, plateau, 0.1, 5.0).unwrap();
        assert!(fit.slope >= 0.7 * m * omega1, "m = {m}: exponent {}", fit.slope);
    }
}

#[test]
fn sup_norm_envelope_constant_is_stable_across_seeds() {
    let (model, spec) = setup();
    let constant = |seed: u64| {
        [0.0, 1.0, 3.0]
            .iter()
            .map(|&r| {
                let x0 = if r == 0.0 { StateH::zeros(model.n_modes()) } else { bump(&model, r) };
                let sups: Vec<f64> = (0..64)
                    .map(|path| {
                        let mut cfg = TrajectoryConfig::new(x0.clone(), 5.0, 1e-3, Drift::Cubic);
                        cfg.master_seed = seed;
                        cfg.path_id = path;
                        cfg.record_every = 10;
                        let rec = integrate(&model, &spec, &cfg).unwrap();
                        rec.h_norms.iter().map(|n| n * n).fold(0.0, f64::max)
                    })
                    .collect();
                let s = mean_se(&sups).mean;
                assert!(s.is_finite());
                s / (r * r + 1.0)
            })
            .fold(0.0, f64::max)
    };
    let (a, b) = (constant(21), constant(22));
    assert!((a / b - 1.0).abs() < 0.1, "C = {a} vs {b}");
}

#[test]
fn strong_order_with_noise_is_at_least_half() {
    let (model, spec) = setup();
    let x0 = bump(&model, 1.0);
    let t = 0.5;
    let base = 5e-4 / 8.0;
    let run = |dt: f64, path: u64| {
        let mut cfg = TrajectoryConfig::new(x0.clone(), t, dt, Drift::Cubic);
        cfg.master_seed = 31;
        cfg.path_id = path;
        cfg.record_every = 1_000_000;
        cfg.noise_substeps = (dt / base).round() as usize;
        integrate(&model, &spec, &cfg).unwrap().terminal
    };
    let dts = [2e-3, 1e-3, 5e-4];
    let mut errs = Vec::new();
    for &dt in &dts {
        let sq: Vec<f64> = (0..8).map(|p| model.norm_h_sq(&run(dt, p).sub(&run(base, p)))).collect();
        errs.push(mean_se(&sq).mean.sqrt());
    }
    let fit = ols(&dts.map(f64::ln), &errs.iter().map(|e| e.ln()).collect::<Vec<_>>());
    assert!(fit.slope >= 0.5, "order {} from {errs:?}", fit.slope);
}

#[test]
fn linear_coupling_gap_does_not_depend_on_noise() {
    let (model, spec) = setup();
    let x = bump(&model, 1.0);
    let zero = StateH::zeros(model.n_modes());
    let a = coupled_run(&model, &spec, &x, &zero, Drift::Linear, &study(5.0, 1e-3, 2, 1)).unwrap();
    let b = coupled_run(&model, &spec, &x, &zero, Drift::Linear, &study(5.0, 1e-3, 2, 2)).unwrap();
    for (ga, gb) in a.gaps.iter().flatten().zip(b.gaps.iter().flatten()) {
        assert!((ga - gb).abs() <= 1e-9 * ga.max(1e-300), "{ga} vs {gb}");
    }
}

#[test]
fn backward_moments_stay_below_envelope() {
    let (model, spec) = setup();
    let x0 = bump(&model, 2.0);
    let rep = backward_run(&model, &spec, &[2.0, 4.0, 8.0], &x0, Drift::Cubic, &study(0.0, 1e-3, 32, 17)).unwrap();
    for (m, bound) in rep.second_moments.iter().zip(&rep.moment_bound) {
        assert!(m.mean <= bound + 3.0 * m.se, "{m:?} vs {bound}");
    }
    assert!(rep.fitted_constant.is_finite());
}

#[test]
fn time_and_ensemble_averages_agree_in_linear_case() {
    // One 5% KS test per functional rejects by chance one run in twenty, so
    // the check is on the rejection count over 20 replicates:
    // P(Bin(20, 0.05) > 5) ≈ 3e-4.
    let (model, spec) = setup();
    let h = StateH::unit(model.n_modes(), 0, Channel::U, 1.0);
    let fs = [Functional::NormH, Functional::NormV, Functional::Inner(h)];
    let mut rejections = [0; 3];
    for rep in 0..20 {
        let cfg = InvariantConfig {
            burn_in: 5.0 / model.derived().omega,
            spacing: 5.0,
            time_samples: 100,
            ensemble_paths: 100,
            dt: 0.01,
            master_seed: 19 + rep,
            noise_substeps: 1,
        };
        let m = estimate_invariant_measure(&model, &spec, Drift::Linear, &StateH::zeros(model.n_modes()), &cfg, &fs)
            .unwrap();
        for (i, c) in m.functionals.iter().enumerate() {
            let mass: f64 = c.time_average.mass.iter().sum();
            assert!((mass - 1.0).abs() < 1e-12);
            rejections[i] += usize::from(!c.pass);
        }
    }
    assert!(rejections.iter().all(|r| *r <= 5), "rejections per functional: {rejections:?}");
}

#[test]
fn ou_dynkin_residual_scales_with_dt_and_paths() {
    let (model, spec) = setup();
    let cf = CylinderFunction::new(&model, &spec, &[(0, 0.5)], &[]).unwrap();
    let x = bump(&model, 0.5);
    let dts = [2e-3, 1e-3, 5e-4];
    // substeps keep one Brownian path across the three step sizes
    let gaps: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let mut st = study(0.5, dt, 64, 23);
            st.noise_substeps = (dt / 5e-4).round() as usize;
            dynkin_residual(&model, &spec, &cf, &x, 0.5, Drift::Linear, &st).unwrap().quadrature_gap
        })
        .collect();
    let order = ols(&dts.map(f64::ln), &gaps.iter().map(|g| g.ln()).collect::<Vec<_>>()).slope;
    assert!((order - 1.0).abs() <= 0.3, "quadrature order {order}");

    let small = dynkin_residual(&model, &spec, &cf, &x, 0.5, Drift::Linear, &study(0.5, 1e-3, 64, 29)).unwrap();
    let large = dynkin_residual(&model, &spec, &cf, &x, 0.5, Drift::Linear, &study(0.5, 1e-3, 256, 29)).unwrap();
    let rate = (small.residual.se / large.residual.se).ln() / 4f64.ln();
    assert!((rate - 0.5).abs() <= 0.15, "SE rate {rate}");
    for r in [&small, &large] {
        assert!(r.residual_cv.mean.abs() <= 3.0 * r.residual_cv.se, "{:?}", r.residual_cv);
        assert_eq!(r.matches_exact(3.0), Some(true));
    }
}

#[test]
fn growth_envelope_holds_on_fresh_sample() {
    let (model, spec) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let fit_set = random_states(&model, 500, 5.0, &mut rng);
    let fresh = random_states(&model, 500, 5.0, &mut rng);
    let cf = CylinderFunction::new(&model, &spec, &[(1, 0.5)], &[]).unwrap();
    let g = linear_growth_check_l(&model, &cf, &fit_set, Drift::Cubic).unwrap();
    let analytic = linear_growth_check_l(&model, &cf, &fresh, Drift::Cubic).unwrap();
    assert!(analytic.max_violation_analytic <= 1e-12 * (1.0 + analytic.a_analytic));
    // the fitted envelope is empirical: allow 10% headroom out of sample
    let inflated = sfhn::kolmogorov::GrowthFit { a_fit: 1.1 * g.a_fit, b_fit: 1.1 * g.b_fit, ..g.clone() };
    assert!(inflated.violation_on(&model, &cf, &fresh, Drift::Cubic) <= 0.0);

    let doubled = linear_growth_check_l(&model, &cf.scaled(2.0), &fit_set, Drift::Cubic).unwrap();
    assert!((doubled.a_analytic - 4.0 * g.a_analytic).abs() <= 1e-12 * doubled.a_analytic);
    assert!((doubled.b_analytic - 2.0 * g.b_analytic).abs() <= 1e-12 * doubled.b_analytic);
    assert!(doubled.a_fit.is_finite() && doubled.b_fit.is_finite());
    assert!(doubled.a_fit <= 4.0 * g.a_fit * (1.0 + 1e-9) + 1e-12);
}
