//! One function per subcommand. Each returns its artifacts; nothing here
//! touches the file system.

use serde::Serialize;
use sfhn::ergodics::{
    estimate_invariant_measure, estimate_moments, linear_covariance_time_average, two_start_ks,
    Functional, InvariantConfig, SamplingPlan,
};
use sfhn::kolmogorov::{dynkin_residual, CylinderFunction, DynkinReport};
use sfhn::solver::{
    backward_run, coupled_run, eps_convergence_study, integrate, run_ensemble, TrajectoryConfig,
};
use sfhn::stats::{mean_se, MeanSe};
use sfhn::{Channel, Model, StateH};

use crate::{summary_artifact, Artifact, CliError, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Eigen,
    Simulate,
    Couple,
    Convergence,
    Moments,
    Invariant,
    LinearOracle,
    Dynkin,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Eigen => "eigen",
            Experiment::Simulate => "simulate",
            Experiment::Couple => "couple",
            Experiment::Convergence => "convergence",
            Experiment::Moments => "moments",
            Experiment::Invariant => "invariant",
            Experiment::LinearOracle => "linear-oracle",
            Experiment::Dynkin => "dynkin",
        }
    }
}

pub fn run(exp: Experiment, cfg: &ExperimentConfig) -> Result<Vec<Artifact>, CliError> {
    match exp {
        Experiment::Eigen => eigen(cfg),
        Experiment::Simulate => simulate(cfg),
        Experiment::Couple => couple(cfg),
        Experiment::Convergence => convergence(cfg),
        Experiment::Moments => moments(cfg),
        Experiment::Invariant => invariant(cfg),
        Experiment::LinearOracle => linear_oracle(cfg),
        Experiment::Dynkin => dynkin(cfg),
    }
}

fn csv_row(values: &[f64]) -> String {
    let cells: Vec<String> = values.iter().map(|v| format!("{v:.17e}")).collect();
    cells.join(",") + "\n"
}

/// `x` rescaled to the given `H`-norm (zero stays zero).
fn with_norm(model: &Model, x: &StateH, norm: f64) -> StateH {
    let n = model.norm_h_sq(x).sqrt();
    if n > 0.0 {
        x.scaled(norm / n)
    } else {
        x.clone()
    }
}

#[derive(Serialize)]
struct EigenSummary<'a> {
    mu: &'a [f64],
    gram_defect: f64,
    sup_bound: f64,
    analytic_cosines: bool,
}

fn eigen(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, CliError> {
    let (model, _) = cfg.build()?;
    let basis = model.basis();
    let mut values = String::from("k,mu\n");
    for (k, mu) in basis.mu.iter().enumerate() {
        values.push_str(&format!("{k},{mu:.17e}\n"));
    }
    let summary = EigenSummary {
        mu: &basis.mu,
        gram_defect: basis.gram_defect,
        sup_bound: basis.sup_bound,
        analytic_cosines: basis.constant_c.is_some(),
    };
    Ok(vec![
        Artifact::text("modes.csv", basis.to_csv()),
        Artifact::text("eigenvalues.csv", values),
        summary_artifact("eigen", cfg, &summary)?,
    ])
}

#[derive(Serialize)]
struct SimulateSummary {
    paths: usize,
    terminal_norm_h: MeanSe,
    max_norm_h: MeanSe,
    terminal_norm_v: MeanSe,
    per_path_terminal_norm_h: Vec<f64>,
}

fn simulate(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, CliError> {
    let (model, spec) = cfg.build()?;
    let x0 = cfg.run.x0.to_state(&model)?;
    let records = run_ensemble(cfg.run.paths, |path| {
        let mut tc = TrajectoryConfig::new(x0.clone(), cfg.run.t_end, cfg.run.dt, cfg.run.drift);
        tc.master_seed = cfg.master_seed;
        tc.path_id = path;
        tc.record_every = cfg.run.record_every;
        tc.noise_substeps = cfg.run.noise_substeps;
        integrate(&model, &spec, &tc)
    })?;
    let mut out: Vec<Artifact> = records
        .iter()
        .enumerate()
        .map(|(i, r)| Artifact::text(format!("path_{i:04}.csv"), r.to_csv()))
        .collect();
    let last = |r: &sfhn::solver::TrajectoryRecord| *r.h_norms.last().unwrap_or(&f64::NAN);
    let terminal: Vec<f64> = records.iter().map(last).collect();
    let summary = SimulateSummary {
        paths: records.len(),
        terminal_norm_h: mean_se(&terminal),
        max_norm_h: mean_se(&records.iter().map(|r| r.h_norms.iter().copied().fold(0.0, f64::max)).collect::<Vec<_>>()),
        terminal_norm_v: mean_se(&records.iter().map(|r| *r.v_norms.last().unwrap_or(&f64::NAN)).collect::<Vec<_>>()),
        per_path_terminal_norm_h: terminal,
    };
    out.push(summary_artifact("simulate", cfg, &summary)?);
    Ok(out)
}

#[derive(Serialize)]
struct CoupleSummary {
    omega: f64,
    initial_gap: f64,
    max_envelope_ratio: f64,
    max_relative_increase: f64,
    min_exponent: f64,
    min_r2: f64,
    envelope_holds: bool,
    exponent_ok: bool,
}

fn couple(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, CliError> {
    let (model, spec) = cfg.build()?;
    let x_bar = cfg.couple.x_bar.to_state(&model)?;
    let mut x = cfg.run.x0.to_state(&model)?;
    if let Some(g) = cfg.couple.initial_gap {
        x = x_bar.add(&with_norm(&model, &x.sub(&x_bar), g));
    }
    let rep = coupled_run(&model, &spec, &x, &x_bar, cfg.run.drift, &cfg.study(cfg.run.t_end))?;
    let mut csv = String::from("t,mean_gap,max_gap,envelope\n");
    for (i, &t) in rep.times.iter().enumerate() {
        let col: Vec<f64> = rep.gaps.iter().map(|g| g[i]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let max = col.iter().copied().fold(0.0, f64::max);
        csv.push_str(&csv_row(&[t, mean, max, (-2.0 * rep.omega * t).exp() * rep.initial_gap]));
    }
    let summary = CoupleSummary {
        omega: rep.omega,
        initial_gap: rep.initial_gap,
        max_envelope_ratio: rep.max_envelope_ratio,
        max_relative_increase: rep.max_relative_increase,
        min_exponent: rep.min_exponent,
        min_r2: rep.min_r2,
        envelope_holds: rep.max_envelope_ratio <= 1.05,
        exponent_ok: rep.min_exponent >= 0.8 * 2.0 * rep.omega && rep.min_r2 >= 0.95,
    };
    Ok(vec![Artifact::text("couple.csv", csv), summary_artifact("couple", cfg, &summary)?])
}

fn convergence(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, CliError> {
    let (model, spec) = cfg.build()?;
    let x0 = cfg.run.x0.to_state(&model)?;
    let study = cfg.study(cfg.convergence.t_end);
    let rep = eps_convergence_study(&model, &spec, &cfg.convergence.ladder, &x0, &study)?;
    let mut csv = String::from("eps,lambda,d_mean,d_se\n");
    for p in rep.halving.iter().chain(&rep.ladder_pairs) {
        csv.push_str(&csv_row(&[p.eps, p.lambda, p.distance.mean, p.distance.se]));
    }
    Ok(vec![Artifact::text("convergence.csv", csv), summary_artifact("convergence", cfg, &rep)?])
}

#[derive(Serialize)]
struct MomentsSummary {
    omega1: f64,
    x0_norm_sq: f64,
    envelope: [f64; 2],
    flatness: [f64; 2],
}

fn moments(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, CliError> {
    let (model, spec) = cfg.build()?;
    let x0 = if cfg.moments.from_zero {
        StateH::zeros(model.n_modes())
    } else {
        cfg.run.x0.to_state(&model)?
    };
    let rep = estimate_moments(&model, &spec, cfg.run.drift, &x0, &cfg.study(cfg.moments.t_end))?;
    let summary = MomentsSummary {
        omega1: rep.omega1,
        x0_norm_sq: rep.x0_norm_sq,
        envelope: rep.envelope,
        flatness: rep.flatness,
    };
    Ok(vec![Artifact::text("moments.csv", rep.to_csv()), summary_artifact("moments", cfg, &summary)?])
}

#[derive(Serialize)]
struct InvariantSummary {
    burn_in: f64,
    time_samples: usize,
    ensemble_samples: usize,
    functionals: Vec<FunctionalSummary>,
    two_start: sfhn::ergodics::TwoStartTest,
    backward: sfhn::solver::BackwardReport,
}

#[derive(Serialize)]
struct FunctionalSummary {
    name: String,
    time_mean: MeanSe,
    ensemble_mean: MeanSe,
    ks: f64,
    ks_critical: f64,
    pass: bool,
}

fn invariant(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, CliError> {
    let (model, spec) = cfg.build()?;
    let x0 = cfg.run.x0.to_state(&model)?;
    let block = &cfg.invariant;
    let burn_in = block.burn_in.unwrap_or(5.0 / model.derived().omega);
    let icfg = InvariantConfig {
        burn_in,
        spacing: block.spacing,
        time_samples: block.time_samples,
        ensemble_paths: cfg.run.paths,
        dt: cfg.run.dt,
        master_seed: cfg.master_seed,
        noise_substeps: cfg.run.noise_substeps,
    };
    let e0 = StateH::unit(model.n_modes(), 0, Channel::U, 1.0);
    let functionals = [Functional::NormH, Functional::NormV, Functional::Inner(e0)];
    let measure = estimate_invariant_measure(&model, &spec, cfg.run.drift, &x0, &icfg, &functionals)?;
    let plan = SamplingPlan {
        burn_in,
        spacing: block.spacing,
        samples_per_path: block.samples_per_path,
        n_paths: cfg.run.paths,
        dt: cfg.run.dt,
        master_seed: cfg.master_seed.wrapping_add(1),
        noise_substeps: cfg.run.noise_substeps,
    };
    let far = with_norm(&model, &x0, block.second_start_norm);
    let two_start = two_start_ks(&model, &spec, cfg.run.drift, &StateH::zeros(model.n_modes()), &far, &plan)?;
    let mut bstudy = cfg.study(0.0);
    bstudy.master_seed = cfg.master_seed.wrapping_add(2);
    let backward = backward_run(&model, &spec, &block.ladder, &x0, cfg.run.drift, &bstudy)?;

    let mut out = Vec::new();
    for c in &measure.functionals {
        out.push(Artifact::text(format!("hist_{}_time.csv", c.name), c.time_average.to_csv()));
        out.push(Artifact::text(format!("hist_{}_ensemble.csv", c.name), c.ensemble.to_csv()));
    }
    let mut csv = String::from("gamma,lambda,d_mean,d_se\n");
    for (g, l, d) in &backward.pairwise {
        csv.push_str(&csv_row(&[*g, *l, d.mean, d.se]));
    }
    out.push(Artifact::text("backward.csv", csv));
    let summary = InvariantSummary {
        burn_in,
        time_samples: measure.time_samples,
        ensemble_samples: measure.ensemble_samples,
        functionals: measure
            .functionals
            .iter()
            .map(|c| FunctionalSummary {
                name: c.name.clone(),
                time_mean: c.time_mean,
                ensemble_mean: c.ensemble_mean,
                ks: c.ks,
                ks_critical: c.ks_critical,
                pass: c.pass,
            })
            .collect(),
        two_start,
        backward,
    };
    out.push(summary_artifact("invariant", cfg, &summary)?);
    Ok(out)
}

#[derive(Serialize)]
struct LinearOracleSummary {
    report: sfhn::ergodics::LinearOracleReport,
    covariance_within_5_percent: bool,
    second_moment_within_3_se: bool,
}

fn linear_oracle(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, CliError> {
    let (model, spec) = cfg.build()?;
    let lo = &cfg.linear_oracle;
    let mut study = cfg.study(0.0);
    study.dt = lo.dt;
    study.noise_substeps = 1;
    let rep = linear_covariance_time_average(&model, &spec, lo.burn_in, lo.average_time, lo.modes, &study)?;
    let mut csv = String::from("k,target_uu,target_uw,target_ww,emp_uu,emp_uw,emp_ww,rel_err\n");
    for m in &rep.modes {
        csv.push_str(&format!("{},", m.mode));
        csv.push_str(&csv_row(&[
            m.target[0][0],
            m.target[0][1],
            m.target[1][1],
            m.empirical[0][0],
            m.empirical[0][1],
            m.empirical[1][1],
            m.relative_error,
        ]));
    }
    let summary = LinearOracleSummary {
        covariance_within_5_percent: rep.max_relative_error <= 0.05,
        second_moment_within_3_se: (rep.second_moment.mean - rep.second_moment_target).abs()
            <= 3.0 * rep.second_moment.se,
        report: rep,
    };
    Ok(vec![Artifact::text("linear_oracle.csv", csv), summary_artifact("linear-oracle", cfg, &summary)?])
}

#[derive(Serialize)]
struct DynkinSummary {
    h_modes: Vec<usize>,
    coefficient: f64,
    report: DynkinReport,
    residual: f64,
    se: f64,
    rejected_paths: usize,
    pass: bool,
    matches_exact: Option<bool>,
}

fn dynkin(cfg: &ExperimentConfig) -> Result<Vec<Artifact>, CliError> {
    let (model, spec) = cfg.build()?;
    let x0 = cfg.run.x0.to_state(&model)?;
    let d = &cfg.dynkin;
    let hu: Vec<(usize, f64)> = d.h_modes.iter().map(|&k| (k, d.coefficient)).collect();
    let cf = CylinderFunction::new(&model, &spec, &hu, &[])?;
    let rep = dynkin_residual(&model, &spec, &cf, &x0, d.t, cfg.run.drift, &cfg.study(d.t))?;
    let summary = DynkinSummary {
        h_modes: d.h_modes.clone(),
        coefficient: d.coefficient,
        residual: rep.residual_cv.mean.abs(),
        se: rep.residual_cv.se,
        rejected_paths: rep.rejected_paths,
        pass: rep.passes(3.0),
        matches_exact: rep.matches_exact(3.0),
        report: rep,
    };
    Ok(vec![summary_artifact("dynkin", cfg, &summary)?])
}
