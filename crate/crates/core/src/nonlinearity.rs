//! The FitzHugh–Nagumo cubic, its monotone shift and the Lipschitz
//! regularization used to construct solutions.
//!
//! With `s = u − ξ₀`:
//!
//! ```text
//! f(u)       = −u(u − 1)(u − ξ₁)
//! f_η(u)     = f(u) − ηu = −s³ − ξ₀³
//! f_{η,ε}(u) = f_η(u) / D_ε(u),   D_ε(u) = 1 + ε(1 − ξ₀s + s²)
//! h_ε(u)     = −s³ / D_ε(u)
//! ```

use serde::Serialize;

use crate::error::{Result, SfhnError};
use crate::model::{Model, StateH};

/// `f(u) = −u(u − 1)(u − ξ₁)`.
#[inline]
pub fn f(u: f64, xi1: f64) -> f64 {
    -u * (u - 1.0) * (u - xi1)
}

/// `f′(u) = −3u² + 2(1 + ξ₁)u − ξ₁`.
#[inline]
pub fn f_prime(u: f64, xi1: f64) -> f64 {
    -3.0 * u * u + 2.0 * (1.0 + xi1) * u - xi1
}

/// Constants of the drift splitting plus the regularization parameter.
/// `eta` and `xi0` are always derived from `xi1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftParams {
    xi1: f64,
    eta: f64,
    xi0: f64,
    eps: f64,
}

impl DriftParams {
    pub fn new(xi1: f64, eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(SfhnError::invalid("eps", format!("must be finite and ≥ 0, got {eps}")));
        }
        let eta = (xi1 * xi1 - xi1 + 1.0) / 3.0;
        let xi0 = (1.0 + xi1) / 3.0;
        // min over s of 1 − ξ₀s + s² is 1 − ξ₀²/4.
        let min_den = 1.0 + eps * (1.0 - 0.25 * xi0 * xi0);
        if !(min_den > 0.0) {
            return Err(SfhnError::invalid(
                "eps",
                format!("regularization denominator not positive (eps = {eps}, xi0 = {xi0})"),
            ));
        }
        Ok(DriftParams { xi1, eta, xi0, eps })
    }

    pub fn xi1(&self) -> f64 {
        self.xi1
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn xi0(&self) -> f64 {
        self.xi0
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        DriftParams::new(self.xi1, eps)
    }

    #[inline]
    pub fn denominator(&self, u: f64) -> f64 {
        let s = u - self.xi0;
        1.0 + self.eps * (1.0 - self.xi0 * s + s * s)
    }

    /// `f(u) − ηu`.
    #[inline]
    pub fn f_eta(&self, u: f64) -> f64 {
        f(u, self.xi1) - self.eta * u
    }

    /// `−(u − ξ₀)³ − ξ₀³`, the factored form of `f_η`.
    #[inline]
    pub fn f_eta_factored(&self, u: f64) -> f64 {
        let s = u - self.xi0;
        -s * s * s - self.xi0.powi(3)
    }

    #[inline]
    pub fn f_eta_eps(&self, u: f64) -> f64 {
        self.f_eta_factored(u) / self.denominator(u)
    }

    /// Derivative of `f_{η,ε}` by the quotient rule:
    /// `−3s²/D + ε(s³ + ξ₀³)(2s − ξ₀)/D²`.
    #[inline]
    pub fn f_eta_eps_prime(&self, u: f64) -> f64 {
        let s = u - self.xi0;
        let d = self.denominator(u);
        -3.0 * s * s / d + self.eps * (s * s * s + self.xi0.powi(3)) * (2.0 * s - self.xi0) / (d * d)
    }

    #[inline]
    pub fn h_eps(&self, u: f64) -> f64 {
        let s = u - self.xi0;
        -s * s * s / self.denominator(u)
    }
}

/// Applies `g` pointwise to the grid values of `u` and projects back.
///
/// With `M ≥ 2N` grid points the projection of a cubic in `u` is exact,
/// so no aliased energy enters the retained modes.
pub fn apply_pointwise(model: &Model, u: &[f64], g: impl Fn(f64) -> f64) -> Vec<f64> {
    let basis = model.basis();
    let mut grid = vec![0.0; model.n_grid()];
    basis.synthesize(u, &mut grid);
    for v in grid.iter_mut() {
        *v = g(*v);
    }
    let mut out = vec![0.0; model.n_modes()];
    basis.project(&grid, &mut out);
    out
}

/// `F(x) = (f(u), 0)`.
pub fn apply_f(model: &Model, x: &StateH) -> StateH {
    let xi1 = model.params().xi1;
    let u = apply_pointwise(model, &x.u, |v| f(v, xi1));
    StateH::new(u, vec![0.0; model.n_modes()])
}

/// `F_η(x) = (f_η(u), 0)`.
pub fn apply_f_eta(model: &Model, x: &StateH, dp: &DriftParams) -> StateH {
    let u = apply_pointwise(model, &x.u, |v| dp.f_eta(v));
    StateH::new(u, vec![0.0; model.n_modes()])
}

/// `F_{η,ε}(x) = (f_{η,ε}(u), 0)`.
pub fn apply_f_eta_eps(model: &Model, x: &StateH, dp: &DriftParams) -> StateH {
    let u = apply_pointwise(model, &x.u, |v| dp.f_eta_eps(v));
    StateH::new(u, vec![0.0; model.n_modes()])
}

/// `⟨F_η(x) − F_η(y), x − y⟩_H`; nonpositive by monotonicity of `f_η`.
pub fn monotonicity_gap(model: &Model, x: &StateH, y: &StateH, dp: &DriftParams) -> f64 {
    let fx = apply_f_eta(model, x, dp);
    let fy = apply_f_eta(model, y, dp);
    model.dot_h(&fx.sub(&fy), &x.sub(y))
}

/// Analytic constant in `|F_η(x)|_H ≤ C(1 + |u|³_{L⁶})`.
///
/// From `|f_η(u)| ≤ |u − ξ₀|³ + ξ₀³` and `aᵏ ≤ 1 + a³` for `k ≤ 3`:
/// `C = √γ (1 + 3ξ₀ + 3ξ₀² + 2ξ₀³)`. The projection onto the retained
/// modes does not increase the discrete `L²` norm.
pub fn growth_constant_bound(gamma: f64, xi0: f64) -> f64 {
    gamma.sqrt() * (1.0 + 3.0 * xi0 + 3.0 * xi0 * xi0 + 2.0 * xi0.powi(3))
}

/// `|F_η(x)|_H / (1 + |u|³_{L⁶})`.
pub fn growth_ratio(model: &Model, x: &StateH, dp: &DriftParams) -> f64 {
    let fx = apply_f_eta(model, x, dp);
    model.norm_h_sq(&fx).sqrt() / (1.0 + model.l6_norm_u(x).powi(3))
}

/// Right-hand side terms of the one-sided estimate between two
/// regularizations:
/// `|h_ε(u)|² + |h_λ(v)|² + |u−v| + |u−ξ₀|² + |v−ξ₀|² + |u−ξ₀|³ + |v−ξ₀|³`.
pub fn one_sided_terms(de: &DriftParams, dl: &DriftParams, u: f64, v: f64) -> f64 {
    let xi0 = de.xi0;
    let (su, sv) = ((u - xi0).abs(), (v - xi0).abs());
    de.h_eps(u).powi(2)
        + dl.h_eps(v).powi(2)
        + (u - v).abs()
        + su * su
        + sv * sv
        + su.powi(3)
        + sv.powi(3)
}

/// `(f_{η,ε}(u) − f_{η,λ}(v))(u − v)`.
pub fn one_sided_lhs(de: &DriftParams, dl: &DriftParams, u: f64, v: f64) -> f64 {
    (de.f_eta_eps(u) - dl.f_eta_eps(v)) * (u - v)
}
