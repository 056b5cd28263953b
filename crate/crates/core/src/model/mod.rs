//! State space, eigenbasis, linear drift operator and dissipativity
//! constants of the stochastic FitzHugh–Nagumo system
//!
//! ```text
//! du = (∂ξ(c ∂ξ u) − p u + f(u) − w) dt + dW₁
//! dw = (γ u − α w) dt + dW₂
//! ```
//!
//! on `[0, 1]` with Neumann boundary conditions. States live in
//! `H = L² × L²` with the weighted product `γ⟨u,ū⟩ + ⟨w,w̄⟩`.

mod basis;
mod state;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use basis::{build_eigenbasis, cell_centred_grid, EigenBasis};
pub use state::{Channel, StateH};

use crate::error::{Result, SfhnError};
use crate::linalg::Mat2;

/// Spatial coefficient profile on `[0, 1]`.
#[derive(Clone)]
pub enum Profile {
    Constant(f64),
    /// Values on a cell-centred grid of its own length, interpolated
    /// piecewise linearly and extended as constants beyond the end cells.
    Table(Vec<f64>),
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Profile {
    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Profile::Function(Arc::new(f))
    }

    pub fn eval(&self, xi: f64) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Table(t) => {
                let n = t.len();
                if n == 1 {
                    return t[0];
                }
                let pos = xi * n as f64 - 0.5;
                if pos <= 0.0 {
                    return t[0];
                }
                let i = pos.floor() as usize;
                if i >= n - 1 {
                    return t[n - 1];
                }
                let frac = pos - i as f64;
                t[i] * (1.0 - frac) + t[i + 1] * frac
            }
            Profile::Function(f) => f(xi),
        }
    }

    /// `Some(v)` when the profile is the same constant everywhere.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Profile::Constant(v) => Some(*v),
            Profile::Table(t) if !t.is_empty() && t.iter().all(|v| *v == t[0]) => Some(t[0]),
            _ => None,
        }
    }

    /// Infimum over `[0, 1]`: exact for constants and tables, sampled on a
    /// fine grid plus `extra` points for general functions.
    pub fn infimum(&self, extra: &[f64]) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Table(t) => t.iter().copied().fold(f64::INFINITY, f64::min),
            Profile::Function(f) => (0..=4096)
                .map(|i| i as f64 / 4096.0)
                .chain(extra.iter().copied())
                .map(|x| f(x))
                .fold(f64::INFINITY, f64::min),
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        match self {
            Profile::Table(t) if t.is_empty() => Err(SfhnError::invalid(field, "empty table")),
            Profile::Table(t) if t.iter().any(|v| !v.is_finite()) => {
                Err(SfhnError::invalid(field, "table contains non-finite values"))
            }
            Profile::Constant(v) if !v.is_finite() => {
                Err(SfhnError::invalid(field, "value is not finite"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Constant(v) => write!(f, "Constant({v})"),
            Profile::Table(t) => f.debug_tuple("Table").field(t).finish(),
            Profile::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl Serialize for Profile {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Profile::Constant(v) => s.serialize_f64(*v),
            Profile::Table(t) => t.serialize(s),
            Profile::Function(_) => Err(serde::ser::Error::custom(
                "function profiles cannot be serialized",
            )),
        }
    }
}

impl<'de> Deserialize<'de> for Profile {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Scalar(f64),
            Table(Vec<f64>),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Scalar(v) => Profile::Constant(v),
            Repr::Table(t) => Profile::Table(t),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub alpha: f64,
    pub gamma: f64,
    pub xi1: f64,
    pub c: Profile,
    pub p: Profile,
    pub n_modes: usize,
    pub n_grid: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            alpha: 1.0,
            gamma: 0.5,
            xi1: 0.5,
            c: Profile::Constant(1.0),
            p: Profile::Constant(0.3),
            n_modes: 32,
            n_grid: 64,
        }
    }
}

impl ModelParams {
    pub fn with_modes(mut self, n_modes: usize, n_grid: usize) -> Self {
        self.n_modes = n_modes;
        self.n_grid = n_grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(SfhnError::invalid("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(SfhnError::invalid("gamma", format!("must be > 0, got {}", self.gamma)));
        }
        if !(self.xi1 > 0.0 && self.xi1 < 1.0) {
            return Err(SfhnError::invalid("xi1", format!("must lie in (0, 1), got {}", self.xi1)));
        }
        self.c.validate("c")?;
        self.p.validate("p")?;
        if self.n_modes == 0 {
            return Err(SfhnError::invalid("n_modes", "must be at least 1"));
        }
        if self.n_grid < 2 * self.n_modes {
            return Err(SfhnError::invalid(
                "n_grid",
                format!("must be at least 2·n_modes = {}, got {}", 2 * self.n_modes, self.n_grid),
            ));
        }
        let grid = cell_centred_grid(self.n_grid);
        let c_min = self.c.infimum(&grid);
        if !(c_min > 0.0) {
            return Err(SfhnError::invalid("c", format!("minimum {c_min} is not positive")));
        }
        let p_min = self.p.infimum(&grid);
        if !(p_min > 0.0) {
            return Err(SfhnError::invalid("p", format!("minimum {p_min} is not positive")));
        }
        let need = self.xi1 * self.xi1 - self.xi1 + 1.0;
        if 3.0 * p_min - need < 0.0 {
            return Err(SfhnError::invalid(
                "p",
                format!("3·min p = {} is below xi1² − xi1 + 1 = {need}", 3.0 * p_min),
            ));
        }
        Ok(())
    }
}

/// Constants of the drift splitting and the dissipativity estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    /// `sup f′ = (ξ₁² − ξ₁ + 1)/3`.
    pub eta: f64,
    /// Inflection point of `f`, `(1 + ξ₁)/3`.
    pub xi0: f64,
    pub omega: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub p_min: f64,
    pub c_min: f64,
}

impl DerivedConstants {
    pub fn new(xi1: f64, alpha: f64, p_min: f64, c_min: f64) -> Self {
        let eta = (xi1 * xi1 - xi1 + 1.0) / 3.0;
        let xi0 = (1.0 + xi1) / 3.0;
        let omega1 = (p_min - eta).min(alpha);
        DerivedConstants {
            eta,
            xi0,
            omega: omega1,
            omega1,
            omega2: omega1.min(c_min),
            p_min,
            c_min,
        }
    }
}

/// Validated parameters together with the eigenbasis. Immutable and
/// shareable across threads.
#[derive(Debug, Clone)]
pub struct Model {
    params: ModelParams,
    derived: DerivedConstants,
    basis: EigenBasis,
    p_grid: Vec<f64>,
    p_const: Option<f64>,
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let basis = build_eigenbasis(&params.c, params.n_modes, params.n_grid)?;
        let p_grid: Vec<f64> = basis.grid.iter().map(|&x| params.p.eval(x)).collect();
        let p_min = params.p.infimum(&basis.grid);
        let c_min = params.c.infimum(&basis.grid);
        let derived = DerivedConstants::new(params.xi1, params.alpha, p_min, c_min);
        let p_const = params.p.constant_value();
        Ok(Model {
            params,
            derived,
            basis,
            p_grid,
            p_const,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn derived(&self) -> &DerivedConstants {
        &self.derived
    }

    pub fn basis(&self) -> &EigenBasis {
        &self.basis
    }

    pub fn n_modes(&self) -> usize {
        self.params.n_modes
    }

    pub fn n_grid(&self) -> usize {
        self.params.n_grid
    }

    pub fn gamma(&self) -> f64 {
        self.params.gamma
    }

    /// `Some(p)` when the decay coefficient is spatially constant.
    pub fn p_constant(&self) -> Option<f64> {
        self.p_const
    }

    /// Constant used for `p` in the per-mode linear part: `p` itself when
    /// constant, `min p` otherwise.
    pub fn p_bar(&self) -> f64 {
        self.p_const.unwrap_or(self.derived.p_min)
    }

    pub fn p_grid(&self) -> &[f64] {
        &self.p_grid
    }

    fn check_dim(&self, x: &StateH) -> Result<()> {
        let n = self.n_modes();
        for found in [x.u.len(), x.w.len()] {
            if found != n {
                return Err(SfhnError::DimensionMismatch { expected: n, found });
            }
        }
        Ok(())
    }

    pub fn inner_h(&self, x: &StateH, y: &StateH) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        Ok(self.dot_h(x, y))
    }

    /// Unchecked weighted inner product for hot loops.
    #[inline]
    pub fn dot_h(&self, x: &StateH, y: &StateH) -> f64 {
        let uu: f64 = x.u.iter().zip(&y.u).map(|(a, b)| a * b).sum();
        let ww: f64 = x.w.iter().zip(&y.w).map(|(a, b)| a * b).sum();
        self.params.gamma * uu + ww
    }

    #[inline]
    pub fn norm_h_sq(&self, x: &StateH) -> f64 {
        self.dot_h(x, x)
    }

    /// `γ(|u|² + |∂ξu|²) + |w|²`.
    pub fn norm_v_sq(&self, x: &StateH) -> Result<f64> {
        self.check_dim(x)?;
        let grad_sq = if self.basis.constant_c.is_some() {
            x.u.iter()
                .enumerate()
                .map(|(k, a)| (k as f64 * std::f64::consts::PI * a).powi(2))
                .sum()
        } else {
            let mut g = vec![0.0; self.n_grid()];
            self.basis.synthesize_derivative(&x.u, &mut g);
            self.basis.weight() * g.iter().map(|v| v * v).sum::<f64>()
        };
        let u_sq: f64 = x.u.iter().map(|a| a * a).sum();
        let w_sq: f64 = x.w.iter().map(|a| a * a).sum();
        Ok(self.params.gamma * (u_sq + grad_sq) + w_sq)
    }

    /// `γ Σ_j u(ξ_j)²/M + Σ_j w(ξ_j)²/M`, the quadrature form of `|x|²_H`.
    pub fn quadrature_norm_h_sq(&self, x: &StateH) -> f64 {
        let m = self.n_grid();
        let mut g = vec![0.0; m];
        self.basis.synthesize(&x.u, &mut g);
        let uu: f64 = g.iter().map(|v| v * v).sum();
        self.basis.synthesize(&x.w, &mut g);
        let ww: f64 = g.iter().map(|v| v * v).sum();
        self.basis.weight() * (self.params.gamma * uu + ww)
    }

    /// `(∫ |u|⁶)^{1/6}` by the midpoint rule.
    pub fn l6_norm_u(&self, x: &StateH) -> f64 {
        let mut g = vec![0.0; self.n_grid()];
        self.basis.synthesize(&x.u, &mut g);
        (self.basis.weight() * g.iter().map(|v| v.powi(6)).sum::<f64>()).powf(1.0 / 6.0)
    }

    /// Coefficients of `p·u` (pseudo-spectral when `p` varies).
    pub fn apply_p(&self, u: &[f64]) -> Vec<f64> {
        match self.p_const {
            Some(p) => u.iter().map(|a| p * a).collect(),
            None => {
                let mut g = vec![0.0; self.n_grid()];
                self.basis.synthesize(u, &mut g);
                for (v, p) in g.iter_mut().zip(&self.p_grid) {
                    *v *= p;
                }
                let mut out = vec![0.0; self.n_modes()];
                self.basis.project(&g, &mut out);
                out
            }
        }
    }

    /// `A x + shift·(u, 0)` with `A(u, w) = (A₀u − p u − w, γu − αw)`.
    pub fn apply_a_shifted(&self, x: &StateH, shift: f64) -> StateH {
        let pu = self.apply_p(&x.u);
        let mu = &self.basis.mu;
        let (gamma, alpha) = (self.params.gamma, self.params.alpha);
        let n = self.n_modes();
        let mut out = StateH::zeros(n);
        for k in 0..n {
            out.u[k] = (mu[k] + shift) * x.u[k] - pu[k] - x.w[k];
            out.w[k] = gamma * x.u[k] - alpha * x.w[k];
        }
        out
    }

    pub fn apply_a(&self, x: &StateH) -> StateH {
        self.apply_a_shifted(x, 0.0)
    }

    /// `A_η = A + η (I, 0)`.
    pub fn apply_a_eta(&self, x: &StateH) -> StateH {
        self.apply_a_shifted(x, self.derived.eta)
    }

    /// Adjoint of `apply_a_shifted` with respect to `⟨·,·⟩_H`:
    /// `((A₀ − p + shift) y_u + y_w, −γ y_u − α y_w)`.
    pub fn apply_a_adjoint_shifted(&self, y: &StateH, shift: f64) -> StateH {
        let pu = self.apply_p(&y.u);
        let mu = &self.basis.mu;
        let (gamma, alpha) = (self.params.gamma, self.params.alpha);
        let n = self.n_modes();
        let mut out = StateH::zeros(n);
        for k in 0..n {
            out.u[k] = (mu[k] + shift) * y.u[k] - pu[k] + y.w[k];
            out.w[k] = -gamma * y.u[k] - alpha * y.w[k];
        }
        out
    }

    /// Per-mode block `[[μ_k − p, −1], [γ, −α]]` of `A`.
    pub fn mode_matrix(&self, k: usize) -> Result<Mat2> {
        self.mode_matrix_shifted(k, 0.0)
    }

    /// Per-mode block of `A + shift·(I, 0)`; requires constant `p`.
    pub fn mode_matrix_shifted(&self, k: usize, shift: f64) -> Result<Mat2> {
        let p = self.p_const.ok_or_else(|| {
            SfhnError::UnsupportedFastPath(
                "per-mode matrices need a spatially constant p".into(),
            )
        })?;
        Ok(self.block(k, p - shift))
    }

    /// `[[μ_k − p_eff, −1], [γ, −α]]` for an arbitrary effective decay.
    pub fn block(&self, k: usize, p_eff: f64) -> Mat2 {
        let n = self.n_modes();
        if k >= n {
            panic!("mode {k} out of range for {n} modes");
        }
        Mat2::new(
            self.basis.mu[k] - p_eff,
            -1.0,
            self.params.gamma,
            -self.params.alpha,
        )
    }

    /// Grid values of `u` and `w`.
    pub fn to_grid(&self, x: &StateH) -> (Vec<f64>, Vec<f64>) {
        let m = self.n_grid();
        let mut gu = vec![0.0; m];
        let mut gw = vec![0.0; m];
        self.basis.synthesize(&x.u, &mut gu);
        self.basis.synthesize(&x.w, &mut gw);
        (gu, gw)
    }

    /// Projects grid values onto the truncated space.
    pub fn from_grid(&self, gu: &[f64], gw: &[f64]) -> StateH {
        let n = self.n_modes();
        let mut x = StateH::zeros(n);
        self.basis.project(gu, &mut x.u);
        self.basis.project(gw, &mut x.w);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_real_eigenvalue;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn default_model() -> Model {
        Model::new(ModelParams::default()).unwrap()
    }

    fn random_state(n: usize, seed: &[f64]) -> StateH {
        let mut x = StateH::zeros(n);
        for k in 0..n {
            let decay = 1.0 / (1.0 + k as f64);
            x.u[k] = seed[2 * k] * decay;
            x.w[k] = seed[2 * k + 1] * decay;
        }
        x
    }

    #[test]
    fn derived_constants_for_defaults() {
        let m = default_model();
        let d = m.derived();
        assert!((d.eta - 0.25).abs() < 1e-15);
        assert!((d.xi0 - 0.5).abs() < 1e-15);
        assert!((d.omega - 0.05).abs() < 1e-15);
        assert!((d.omega2 - 0.05).abs() < 1e-15);
        assert!(d.omega2 <= d.omega1);
    }

    #[test]
    fn constructor_rejects_weak_decay() {
        let params = ModelParams {
            p: Profile::Constant(0.2),
            ..ModelParams::default()
        };
        let err = Model::new(params).unwrap_err();
        assert!(err.to_string().contains("xi1"));
    }

    #[test]
    fn constructor_rejects_bad_scalars() {
        for params in [
            ModelParams { alpha: 0.0, ..ModelParams::default() },
            ModelParams { gamma: -1.0, ..ModelParams::default() },
            ModelParams { xi1: 1.0, ..ModelParams::default() },
            ModelParams { c: Profile::Table(vec![1.0, -0.1]), ..ModelParams::default() },
        ] {
            assert!(Model::new(params).is_err());
        }
    }

    #[test]
    fn inner_product_examples() {
        let m = default_model();
        let n = m.n_modes();
        let zero = StateH::zeros(n);
        assert_eq!(m.inner_h(&zero, &zero).unwrap(), 0.0);
        let e0 = StateH::unit(n, 0, Channel::U, 1.0);
        assert!((m.inner_h(&e0, &e0).unwrap() - 0.5).abs() < 1e-15);
        let short = StateH::zeros(n - 1);
        assert!(matches!(
            m.inner_h(&short, &e0),
            Err(SfhnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn v_norm_of_first_cosine() {
        let m = default_model();
        let e1 = StateH::unit(m.n_modes(), 1, Channel::U, 1.0);
        let v = m.norm_v_sq(&e1).unwrap();
        assert!((v - 0.5 * (1.0 + PI * PI)).abs() < 1e-12);
        assert!((v - 5.4348).abs() < 1e-4);
    }

    #[test]
    fn apply_a_on_first_cosine() {
        let m = default_model();
        let n = m.n_modes();
        let e1 = StateH::unit(n, 1, Channel::U, 1.0);
        let y = m.apply_a(&e1);
        assert!((y.u[1] - (-PI * PI - 0.3)).abs() < 1e-12);
        assert!((y.w[1] - 0.5).abs() < 1e-15);
        let rest: f64 = y.u.iter().chain(&y.w).enumerate()
            .filter(|(i, _)| *i != 1 && *i != n + 1)
            .map(|(_, v)| v.abs())
            .sum();
        assert_eq!(rest, 0.0);
    }

    #[test]
    fn mode_matrix_examples() {
        let m = default_model();
        let m0 = m.mode_matrix(0).unwrap();
        assert_eq!(m0, Mat2::new(-0.3, -1.0, 0.5, -1.0));
        // The slow eigenvalue tends to −α from below as k grows, so it is
        // not monotone in k. The fast branch (≈ μ_k − p) is, and every
        // block inherits the weighted dissipativity bound −min(p, α).
        let mut prev = f64::INFINITY;
        for k in 0..m.n_modes() {
            let mk = m.mode_matrix(k).unwrap();
            let r = max_real_eigenvalue(&mk);
            assert!(r <= -0.3 + 1e-12, "k = {k}: {r}");
            let fast = mk.trace() - r;
            assert!(fast <= prev + 1e-12);
            prev = fast;
        }
        let varying = Model::new(ModelParams {
            p: Profile::function(|x| 0.4 + 0.1 * x),
            ..ModelParams::default().with_modes(8, 16)
        })
        .unwrap();
        assert!(matches!(
            varying.mode_matrix(0),
            Err(SfhnError::UnsupportedFastPath(_))
        ));
    }

    #[test]
    fn profile_json_round_trip() {
        let p: Profile = serde_json::from_str("0.3").unwrap();
        assert_eq!(p.constant_value(), Some(0.3));
        let t: Profile = serde_json::from_str("[1.0, 2.0]").unwrap();
        assert!((t.eval(0.5) - 1.5).abs() < 1e-15);
        assert_eq!(t.eval(0.0), 1.0);
        assert_eq!(t.eval(1.0), 2.0);
        assert_eq!(serde_json::to_string(&t).unwrap(), "[1.0,2.0]");
    }

    proptest! {
        #[test]
        fn inner_product_is_symmetric(seed in prop::collection::vec(-3.0f64..3.0, 128)) {
            let m = default_model();
            let x = random_state(32, &seed[..64]);
            let y = random_state(32, &seed[64..]);
            let a = m.inner_h(&x, &y).unwrap();
            let b = m.inner_h(&y, &x).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn parseval_holds(seed in prop::collection::vec(-3.0f64..3.0, 64)) {
            let m = default_model();
            let x = random_state(32, &seed);
            let spectral = m.norm_h_sq(&x);
            let quad = m.quadrature_norm_h_sq(&x);
            prop_assert!((spectral - quad).abs() <= 1e-8 * (1.0 + spectral));
        }

        #[test]
        fn v_norm_dominates_h_norm(seed in prop::collection::vec(-3.0f64..3.0, 64)) {
            let m = default_model();
            let x = random_state(32, &seed);
            prop_assert!(m.norm_v_sq(&x).unwrap() >= m.norm_h_sq(&x));
        }

        #[test]
        fn cross_terms_cancel(seed in prop::collection::vec(-3.0f64..3.0, 64)) {
            let m = default_model();
            let x = random_state(32, &seed);
            let g = m.gamma();
            let mut s = 0.0;
            for k in 0..32 {
                s += g * (-x.w[k]) * x.u[k] + (g * x.u[k]) * x.w[k];
            }
            prop_assert!(s.abs() <= 1e-14 * (1.0 + m.norm_h_sq(&x)));
        }

        #[test]
        fn adjoint_is_adjoint(seed in prop::collection::vec(-3.0f64..3.0, 128)) {
            let m = default_model();
            let x = random_state(32, &seed[..64]);
            let y = random_state(32, &seed[64..]);
            let lhs = m.dot_h(&m.apply_a_eta(&x), &y);
            let rhs = m.dot_h(&x, &m.apply_a_adjoint_shifted(&y, m.derived().eta));
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }
}
