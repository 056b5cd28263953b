//! Diagonal Q-Wiener noise, exact per-mode Ornstein–Uhlenbeck steps and
//! trace diagnostics of the stochastic convolution.
//!
//! The noise enters the spectral coefficients directly: over an interval of
//! length `dt` the increment of mode `k` in channel `i` is `N(0, λ_k^i dt)`.
//! Seen in the weighted space `H`, its covariance operator is
//! `Q_H = diag(γQ₁, Q₂)`, whose trace is `γΣλ¹ + Σλ²`.

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SfhnError};
use crate::linalg::{cholesky2_psd, composite_gauss_legendre, expm2, lyapunov2, Mat2, Vec2};
use crate::model::{Model, StateH};
use crate::stats::{mean_se, quantile, MeanSe};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSpec {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    /// Amplitude and decay exponent when generated from the power law.
    pub sigma2: Option<f64>,
    pub decay_exponent: Option<f64>,
}

impl NoiseSpec {
    /// `λ_k^i = σ²(1 + k)^{−2s}` on both channels.
    pub fn power_law(n_modes: usize, sigma2: f64, s: f64) -> Result<Self> {
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(SfhnError::invalid("sigma2", format!("must be finite and ≥ 0, got {sigma2}")));
        }
        if !(s > 0.5 && s.is_finite()) {
            return Err(SfhnError::invalid(
                "s",
                format!("decay exponent must exceed 1/2 for a summable spectrum, got {s}"),
            ));
        }
        let lam: Vec<f64> = (0..n_modes)
            .map(|k| sigma2 * (1.0 + k as f64).powf(-2.0 * s))
            .collect();
        Ok(NoiseSpec {
            lambda1: lam.clone(),
            lambda2: lam,
            sigma2: Some(sigma2),
            decay_exponent: Some(s),
        })
    }

    pub fn from_tables(lambda1: Vec<f64>, lambda2: Vec<f64>) -> Result<Self> {
        if lambda1.len() != lambda2.len() {
            return Err(SfhnError::invalid(
                "lambda2",
                format!("length {} differs from lambda1 length {}", lambda2.len(), lambda1.len()),
            ));
        }
        for (name, t) in [("lambda1", &lambda1), ("lambda2", &lambda2)] {
            if let Some((k, v)) = t.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
                return Err(SfhnError::invalid(name, format!("entry {k} = {v} must be finite and ≥ 0")));
            }
        }
        Ok(NoiseSpec {
            lambda1,
            lambda2,
            sigma2: None,
            decay_exponent: None,
        })
    }

    /// The same spectrum scaled to zero.
    pub fn silent(n_modes: usize) -> Self {
        NoiseSpec::from_tables(vec![0.0; n_modes], vec![0.0; n_modes]).expect("zeros are valid")
    }

    pub fn n_modes(&self) -> usize {
        self.lambda1.len()
    }

    pub fn check_modes(&self, n: usize) -> Result<()> {
        if self.n_modes() != n {
            return Err(SfhnError::DimensionMismatch { expected: n, found: self.n_modes() });
        }
        Ok(())
    }

    /// `Σλ_k¹ + Σλ_k²`.
    pub fn trace_q(&self) -> f64 {
        self.lambda1.iter().sum::<f64>() + self.lambda2.iter().sum::<f64>()
    }

    /// `Tr_H Q` for `Q = diag(Q₁, Q₂)` acting on `H`, summed over the
    /// `H`-orthonormal basis `{(γ^{−1/2}e_k, 0)} ∪ {(0, e_k)}`.
    pub fn trace_q_weighted_basis(&self, gamma: f64) -> f64 {
        let g = gamma.sqrt().recip();
        let mut t = 0.0;
        for k in 0..self.n_modes() {
            // ⟨Q f, f⟩_H with f = (γ^{−1/2} e_k, 0)
            t += gamma * (self.lambda1[k] * g) * g;
            t += self.lambda2[k];
        }
        t
    }

    /// `Tr_H Q_H = γΣλ¹ + Σλ²`, trace of the covariance of the simulated
    /// increments measured in `H`.
    pub fn trace_h(&self, gamma: f64) -> f64 {
        gamma * self.lambda1.iter().sum::<f64>() + self.lambda2.iter().sum::<f64>()
    }

    /// `⟨Q_H h, h⟩_H = γ²Σλ¹h_u² + Σλ²h_w²`.
    pub fn quadratic_form_h(&self, gamma: f64, h: &StateH) -> f64 {
        let mut s = 0.0;
        for k in 0..self.n_modes() {
            s += gamma * gamma * self.lambda1[k] * h.u[k] * h.u[k];
            s += self.lambda2[k] * h.w[k] * h.w[k];
        }
        s
    }

    pub fn mode_q(&self, k: usize) -> Mat2 {
        Mat2::new(self.lambda1[k], 0.0, 0.0, self.lambda2[k])
    }

    pub fn is_silent(&self) -> bool {
        self.trace_q() == 0.0
    }
}

/// Independent `N(0, λ_k^i dt)` increment.
pub fn sample_increment<R: Rng + ?Sized>(spec: &NoiseSpec, dt: f64, rng: &mut R) -> StateH {
    let n = spec.n_modes();
    let mut x = StateH::zeros(n);
    if dt <= 0.0 {
        return x;
    }
    for k in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        x.u[k] = (spec.lambda1[k] * dt).sqrt() * a;
        x.w[k] = (spec.lambda2[k] * dt).sqrt() * b;
    }
    x
}

/// Counter-based source of standard normals indexed by absolute time.
///
/// The normals of base interval `i` depend only on
/// `(master_seed, path_id, i, tag)`, so runs started at different times
/// or with refined steps see the same Brownian path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NoiseStream {
    pub master_seed: u64,
    pub path_id: u64,
    pub tag: u64,
}

impl NoiseStream {
    pub fn new(master_seed: u64, path_id: u64) -> Self {
        NoiseStream { master_seed, path_id, tag: 0 }
    }

    pub fn with_tag(self, tag: u64) -> Self {
        NoiseStream { tag, ..self }
    }

    pub fn interval_rng(&self, interval: i64) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&self.path_id.to_le_bytes());
        seed[16..24].copy_from_slice(&interval.to_le_bytes());
        seed[24..32].copy_from_slice(&self.tag.to_le_bytes());
        ChaCha8Rng::from_seed(seed)
    }

    /// Fills `out` with standard normals for base interval `interval`,
    /// ordered `(u₀, w₀, u₁, w₁, …)`.
    pub fn fill_normals(&self, interval: i64, out: &mut [f64]) {
        let mut rng = self.interval_rng(interval);
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }
}

/// `e^{tM}` and a square root of `Σ(t) = ∫₀ᵗ e^{sM} Q e^{sMᵀ} ds`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuStep {
    pub propagator: Mat2,
    pub cov: Mat2,
    pub chol: Mat2,
}

/// Covariance of the stochastic convolution of one mode after time `t`:
/// `Σ∞ − e^{tM} Σ∞ e^{tMᵀ}` with `Σ∞` from the Lyapunov equation.
pub fn mode_covariance(m: &Mat2, q: &Mat2, t: f64) -> Result<Mat2> {
    if q.iter().all(|v| *v == 0.0) || t == 0.0 {
        return Ok(Mat2::zeros());
    }
    let sinf = lyapunov2(m, q).ok_or_else(|| {
        SfhnError::Internal(format!("Lyapunov system singular for mode matrix {m:?}"))
    })?;
    if t.is_infinite() {
        return Ok(sinf);
    }
    let e = expm2(m, t);
    let s = sinf - e * sinf * e.transpose();
    Ok(0.5 * (s + s.transpose()))
}

impl OuStep {
    pub fn new(m: &Mat2, q: &Mat2, dt: f64) -> Result<Self> {
        if crate::linalg::max_real_eigenvalue(m) >= 0.0 {
            return Err(SfhnError::Internal(format!("mode matrix {m:?} is not Hurwitz")));
        }
        let cov = mode_covariance(m, q, dt)?;
        Ok(OuStep {
            propagator: expm2(m, dt),
            cov,
            chol: cholesky2_psd(&cov),
        })
    }

    #[inline]
    pub fn apply(&self, x: Vec2, z: Vec2) -> Vec2 {
        self.propagator * x + self.chol * z
    }
}

/// One exact step of the linear SDE of mode `k` under `A + shift·(I, 0)`.
pub fn exact_ou_step<R: Rng + ?Sized>(
    xk: Vec2,
    k: usize,
    dt: f64,
    shift: f64,
    model: &Model,
    spec: &NoiseSpec,
    rng: &mut R,
) -> Result<Vec2> {
    let m = model.mode_matrix_shifted(k, shift)?;
    let step = OuStep::new(&m, &spec.mode_q(k), dt)?;
    let z = Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    Ok(step.apply(xk, z))
}

/// Per-mode `H`-trace of a 2×2 coefficient covariance: `γΣ_uu + Σ_ww`.
#[inline]
pub fn weighted_trace(gamma: f64, s: &Mat2) -> f64 {
    gamma * s[(0, 0)] + s[(1, 1)]
}

/// `∫₀^T Tr_H[e^{sA_η} Q_H e^{sA_η*}] ds`, summed in closed form over
/// modes. `horizon = ∞` gives the stationary value.
pub fn convolution_trace_integral(model: &Model, spec: &NoiseSpec, horizon: f64) -> Result<f64> {
    spec.check_modes(model.n_modes())?;
    let eta = model.derived().eta;
    let gamma = model.gamma();
    let mut total = 0.0;
    for k in 0..model.n_modes() {
        let m = model.mode_matrix_shifted(k, eta)?;
        total += weighted_trace(gamma, &mode_covariance(&m, &spec.mode_q(k), horizon)?);
    }
    Ok(total)
}

/// Independent quadrature of the same integral: composite Gauss–Legendre
/// on geometrically graded panels (to resolve the fast modes near `s = 0`)
/// with matrix exponentials from Padé scaling-and-squaring.
pub fn convolution_trace_quadrature(model: &Model, spec: &NoiseSpec, horizon: f64) -> Result<f64> {
    spec.check_modes(model.n_modes())?;
    let eta = model.derived().eta;
    let gamma = model.gamma();
    let mut edges = vec![0.0];
    let mut t = 1e-7_f64.min(horizon);
    while t < horizon {
        edges.push(t);
        t *= 1.25;
    }
    edges.push(horizon);
    let mut total = 0.0;
    for k in 0..model.n_modes() {
        let m: Matrix2<f64> = model.mode_matrix_shifted(k, eta)?;
        let q = spec.mode_q(k);
        for w in edges.windows(2) {
            for (s, wq) in composite_gauss_legendre(w[0], w[1], 1, 12) {
                let e = (m * s).exp();
                total += wq * weighted_trace(gamma, &(e * q * e.transpose()));
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize)]
pub struct SupMoment {
    pub m: u32,
    pub mean: MeanSe,
    pub median: f64,
    pub q90: f64,
    pub q99: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SupStatistics {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub moments: Vec<SupMoment>,
}

/// Monte Carlo statistics of `sup_{t ≤ T} |W_{A_η}(t)|_H^{2m}` for
/// `m ∈ {1, 2}`, where `W_{A_η}` is the stochastic convolution started at
/// zero and sampled exactly on the grid `t_n = n·dt`.
pub fn convolution_sup_statistics(
    model: &Model,
    spec: &NoiseSpec,
    horizon: f64,
    dt: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<SupStatistics> {
    spec.check_modes(model.n_modes())?;
    if !(dt > 0.0) || !(horizon >= 0.0) || n_paths == 0 {
        return Err(SfhnError::invalid("horizon/dt/paths", "need dt > 0, T ≥ 0 and at least one path"));
    }
    let n = model.n_modes();
    let eta = model.derived().eta;
    let steps: Vec<OuStep> = (0..n)
        .map(|k| OuStep::new(&model.mode_matrix_shifted(k, eta)?, &spec.mode_q(k), dt))
        .collect::<Result<_>>()?;
    let n_steps = (horizon / dt).round() as i64;
    let gamma = model.gamma();
    let sups: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let stream = NoiseStream::new(master_seed, path);
            let mut x = vec![Vec2::zeros(); n];
            let mut z = vec![0.0; 2 * n];
            let mut sup: f64 = 0.0;
            for i in 0..n_steps {
                stream.fill_normals(i, &mut z);
                let mut norm = 0.0;
                for k in 0..n {
                    x[k] = steps[k].apply(x[k], Vec2::new(z[2 * k], z[2 * k + 1]));
                    norm += gamma * x[k][0] * x[k][0] + x[k][1] * x[k][1];
                }
                sup = sup.max(norm);
            }
            sup
        })
        .collect();
    let moments = [1u32, 2]
        .iter()
        .map(|&m| {
            let v: Vec<f64> = sups.iter().map(|s| s.powi(m as i32)).collect();
            SupMoment {
                m,
                mean: mean_se(&v),
                median: quantile(&v, 0.5),
                q90: quantile(&v, 0.9),
                q99: quantile(&v, 0.99),
            }
        })
        .collect();
    Ok(SupStatistics { horizon, dt, n_paths, moments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use rand::SeedableRng;

    fn model() -> Model {
        Model::new(ModelParams::default()).unwrap()
    }

    #[test]
    fn partial_zeta_trace() {
        let s = NoiseSpec::power_law(4, 0.01, 1.0).unwrap();
        let expected = 2.0 * 0.01 * (1.0 + 0.25 + 1.0 / 9.0 + 1.0 / 16.0);
        assert!((s.trace_q() - expected).abs() < 1e-15);
        assert!((s.trace_q() - 0.028_472_222_222).abs() < 1e-11);
        assert_eq!(NoiseSpec::power_law(4, 0.0, 1.0).unwrap().trace_q(), 0.0);
        let big = NoiseSpec::power_law(100_000, 0.01, 1.0).unwrap();
        let per_channel = big.lambda1.iter().sum::<f64>();
        let zeta2 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((per_channel - 0.01 * zeta2).abs() < 0.01 * 1.1e-5);
    }

    #[test]
    fn trace_is_gamma_independent_in_weighted_basis() {
        let s = NoiseSpec::power_law(16, 0.01, 1.0).unwrap();
        for gamma in [0.01, 0.5, 1.0, 17.0] {
            assert!((s.trace_q_weighted_basis(gamma) - s.trace_q()).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_spectra() {
        assert!(NoiseSpec::power_law(4, 0.01, 0.5).is_err());
        assert!(NoiseSpec::power_law(4, -1.0, 1.0).is_err());
        assert!(NoiseSpec::from_tables(vec![1.0], vec![]).is_err());
        assert!(NoiseSpec::from_tables(vec![-1.0], vec![1.0]).is_err());
    }

    #[test]
    fn zero_duration_increment_is_zero() {
        let s = NoiseSpec::power_law(4, 0.01, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_increment(&s, 0.0, &mut rng), StateH::zeros(4));
    }

    #[test]
    fn increment_covariance_matches_spectrum() {
        let s = NoiseSpec::power_law(3, 0.01, 1.0).unwrap();
        let dt = 0.1;
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws: Vec<StateH> = (0..n).map(|_| sample_increment(&s, dt, &mut rng)).collect();
        let chans: Vec<Vec<f64>> = (0..3)
            .flat_map(|k| {
                [
                    draws.iter().map(|d| d.u[k]).collect::<Vec<_>>(),
                    draws.iter().map(|d| d.w[k]).collect::<Vec<_>>(),
                ]
            })
            .collect();
        for (c, xs) in chans.iter().enumerate() {
            let target = s.lambda1[c / 2] * dt;
            let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
            // variance of the variance estimator for a centred Gaussian: 2σ⁴/n.
            // 3 SE per check, Bonferroni-widened to 3.5 for the six channels.
            let se = (2.0 / n as f64).sqrt() * target;
            assert!((var - target).abs() < 3.5 * se, "channel {c}: {var} vs {target} (se {se})");
        }
        for a in 0..chans.len() {
            for b in (a + 1)..chans.len() {
                let cov = chans[a].iter().zip(&chans[b]).map(|(x, y)| x * y).sum::<f64>() / n as f64;
                let sa = chans[a].iter().map(|x| x * x).sum::<f64>() / n as f64;
                let sb = chans[b].iter().map(|x| x * x).sum::<f64>() / n as f64;
                let corr = cov / (sa * sb).sqrt();
                // 15 pairs: Bonferroni-widened 3 SE
                assert!(corr.abs() < 3.8 / (n as f64).sqrt(), "{a},{b}: {corr}");
            }
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = NoiseStream::new(7, 3);
        let mut x = vec![0.0; 8];
        let mut y = vec![0.0; 8];
        a.fill_normals(-5, &mut x);
        a.fill_normals(-5, &mut y);
        assert_eq!(x, y);
        a.fill_normals(-4, &mut y);
        assert_ne!(x, y);
        NoiseStream::new(7, 4).fill_normals(-5, &mut y);
        assert_ne!(x, y);
        a.with_tag(1).fill_normals(-5, &mut y);
        assert_ne!(x, y);
    }

    #[test]
    fn stationary_covariance_of_shifted_mode_zero() {
        let m = model();
        let m0 = m.mode_matrix_shifted(0, m.derived().eta).unwrap();
        assert!((m0 - Mat2::new(-0.05, -1.0, 0.5, -1.0)).abs().max() < 1e-15);
        let s = mode_covariance(&m0, &Mat2::new(0.01, 0.0, 0.0, 0.01), f64::INFINITY).unwrap();
        assert!((s[(0, 0)] - 0.022078).abs() < 5e-7);
        assert!((s[(0, 1)] - 0.0038961).abs() < 5e-8);
        assert!((s[(1, 1)] - 0.0069481).abs() < 5e-8);
    }

    #[test]
    fn step_covariance_semigroup_property() {
        let m = model();
        let spec = NoiseSpec::power_law(32, 0.01, 1.0).unwrap();
        for k in [0, 1, 5, 31] {
            let mk = m.mode_matrix(k).unwrap();
            let q = spec.mode_q(k);
            let dt = 0.01;
            let one = mode_covariance(&mk, &q, dt).unwrap();
            let two = mode_covariance(&mk, &q, 2.0 * dt).unwrap();
            let e = expm2(&mk, dt);
            let composed = e * one * e.transpose() + one;
            assert!((two - composed).abs().max() < 1e-12 * (1.0 + two.abs().max()), "k = {k}");
        }
    }

    #[test]
    fn deterministic_step_matches_ode_integration() {
        // Classical RK4 with a tiny step as the reference solution.
        let m = model();
        let silent = NoiseSpec::silent(32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in [0, 3] {
            let mk = m.mode_matrix(k).unwrap();
            let x0 = Vec2::new(0.7, -0.2);
            let dt = 0.5;
            let ours = exact_ou_step(x0, k, dt, 0.0, &m, &silent, &mut rng).unwrap();
            let n = 20_000;
            let h = dt / n as f64;
            let mut y = x0;
            for _ in 0..n {
                let k1 = mk * y;
                let k2 = mk * (y + k1 * (h / 2.0));
                let k3 = mk * (y + k2 * (h / 2.0));
                let k4 = mk * (y + k3 * h);
                y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            assert!((ours - y).abs().max() < 1e-10, "k = {k}");
        }
    }

    #[test]
    fn trace_integral_closed_form_vs_quadrature() {
        let m = model();
        let spec = NoiseSpec::power_law(32, 0.01, 1.0).unwrap();
        assert_eq!(convolution_trace_integral(&m, &spec, 0.0).unwrap(), 0.0);
        for horizon in [0.5, 10.0] {
            let closed = convolution_trace_integral(&m, &spec, horizon).unwrap();
            let quad = convolution_trace_quadrature(&m, &spec, horizon).unwrap();
            assert!((closed - quad).abs() < 1e-10, "T = {horizon}: {closed} vs {quad}");
        }
        let stationary = convolution_trace_integral(&m, &spec, f64::INFINITY).unwrap();
        let omega = m.derived().omega;
        assert!(stationary <= spec.trace_h(m.gamma()) / (2.0 * omega) * (1.0 + 1e-9));
        assert!(stationary <= spec.trace_q() / (2.0 * omega) * (1.0 + 1e-9));
    }

    #[test]
    fn sup_statistics_of_silent_noise_vanish() {
        let m = Model::new(ModelParams::default().with_modes(4, 8)).unwrap();
        let stats = convolution_sup_statistics(&m, &NoiseSpec::silent(4), 1.0, 0.1, 3, 0).unwrap();
        assert!(stats.moments.iter().all(|s| s.mean.mean == 0.0));
    }
}
