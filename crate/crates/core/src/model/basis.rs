//! Neumann eigenpairs of `u ↦ ∂ξ(c(ξ) ∂ξ u)` on `[0, 1]`.
//!
//! Constant `c` uses the analytic cosine family. Variable `c` uses a
//! Rayleigh–Ritz solve in the span of the first `M` cosines (`M` = grid
//! size), which keeps the tabulated modes exactly orthonormal under the
//! midpoint rule and converges spectrally in the mode count.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;

use super::Profile;
use crate::error::{Result, SfhnError};
use crate::linalg::composite_gauss_legendre;

/// Quadrature nodes per Ritz basis function (panels × Gauss order).
const RITZ_PANELS_PER_MODE: usize = 4;
const RITZ_GAUSS_ORDER: usize = 10;
const ORTHONORMALITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct EigenBasis {
    /// Eigenvalues, `mu[0] ≈ 0`, nonincreasing.
    pub mu: Vec<f64>,
    /// Cell-centred grid `ξ_j = (j + ½)/M`.
    pub grid: Vec<f64>,
    /// Mode values, row-major `modes[k * M + j] = e_k(ξ_j)`.
    pub modes: Vec<f64>,
    /// Mode derivatives on the grid, same layout as `modes`.
    pub dmodes: Vec<f64>,
    /// `max_{k,j} |e_k(ξ_j)|`.
    pub sup_bound: f64,
    /// Largest deviation of the discrete Gram matrix from the identity.
    pub gram_defect: f64,
    /// `Some(c)` when the analytic cosine family was used.
    pub constant_c: Option<f64>,
    n_modes: usize,
    n_grid: usize,
}

impl EigenBasis {
    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn mode(&self, k: usize) -> &[f64] {
        &self.modes[k * self.n_grid..(k + 1) * self.n_grid]
    }

    pub fn dmode(&self, k: usize) -> &[f64] {
        &self.dmodes[k * self.n_grid..(k + 1) * self.n_grid]
    }

    /// Quadrature weight of every grid cell.
    pub fn weight(&self) -> f64 {
        1.0 / self.n_grid as f64
    }

    /// Spectral coefficients → grid values.
    pub fn synthesize(&self, coeffs: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, &a) in coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, e) in out.iter_mut().zip(self.mode(k)) {
                *o += a * e;
            }
        }
    }

    /// Spectral coefficients → grid values of the derivative.
    pub fn synthesize_derivative(&self, coeffs: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, &a) in coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, e) in out.iter_mut().zip(self.dmode(k)) {
                *o += a * e;
            }
        }
    }

    /// Grid values → spectral coefficients by the midpoint rule.
    pub fn project(&self, values: &[f64], out: &mut [f64]) {
        let w = self.weight();
        for (k, o) in out.iter_mut().enumerate() {
            *o = w * dot(self.mode(k), values);
        }
    }

    /// Discrete Gram matrix `G_kl = (1/M) Σ_j e_k(ξ_j) e_l(ξ_j)`.
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.n_modes;
        let w = self.weight();
        DMatrix::from_fn(n, n, |k, l| {
            w * self
                .mode(k)
                .iter()
                .zip(self.mode(l))
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
    }

    /// Mode tables as CSV with columns `xi,e_0,...,e_{N-1}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("xi");
        for k in 0..self.n_modes {
            out.push_str(&format!(",e_{k}"));
        }
        out.push('\n');
        for (j, xi) in self.grid.iter().enumerate() {
            out.push_str(&format!("{xi:.17e}"));
            for k in 0..self.n_modes {
                out.push_str(&format!(",{:.17e}", self.modes[k * self.n_grid + j]));
            }
            out.push('\n');
        }
        out
    }
}

/// Dot product with eight independent accumulators so the reduction
/// vectorizes; the summation order is fixed, so results are reproducible.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub fn cell_centred_grid(m: usize) -> Vec<f64> {
    (0..m).map(|j| (j as f64 + 0.5) / m as f64).collect()
}

/// Builds `n_modes` Neumann eigenpairs tabulated on an `n_grid` point grid.
pub fn build_eigenbasis(c: &Profile, n_modes: usize, n_grid: usize) -> Result<EigenBasis> {
    if n_modes == 0 {
        return Err(SfhnError::invalid("n_modes", "must be at least 1"));
    }
    if n_grid < 2 * n_modes {
        return Err(SfhnError::invalid(
            "n_grid",
            format!("must be at least 2·n_modes = {}, got {n_grid}", 2 * n_modes),
        ));
    }
    let grid = cell_centred_grid(n_grid);
    let basis = match c.constant_value() {
        Some(c0) => cosine_basis(c0, n_modes, grid),
        None => ritz_basis(c, n_modes, grid)?,
    };
    check_basis(basis)
}

fn cosine_basis(c0: f64, n_modes: usize, grid: Vec<f64>) -> EigenBasis {
    let m = grid.len();
    let mut modes = vec![0.0; n_modes * m];
    let mut dmodes = vec![0.0; n_modes * m];
    let mut mu = vec![0.0; n_modes];
    for k in 0..n_modes {
        let kp = k as f64 * PI;
        mu[k] = -c0 * kp * kp;
        for (j, &xi) in grid.iter().enumerate() {
            if k == 0 {
                modes[j] = 1.0;
            } else {
                modes[k * m + j] = SQRT_2 * (kp * xi).cos();
                dmodes[k * m + j] = -SQRT_2 * kp * (kp * xi).sin();
            }
        }
    }
    EigenBasis {
        mu,
        grid,
        modes,
        dmodes,
        sup_bound: 0.0,
        gram_defect: 0.0,
        constant_c: Some(c0),
        n_modes,
        n_grid: m,
    }
}

fn ritz_basis(c: &Profile, n_modes: usize, grid: Vec<f64>) -> Result<EigenBasis> {
    let m = grid.len();
    let k_basis = m;
    let quad = composite_gauss_legendre(
        0.0,
        1.0,
        RITZ_PANELS_PER_MODE * k_basis,
        RITZ_GAUSS_ORDER,
    );

    // S_ij = ∫ c ψ_i' ψ_j' with ψ_j = √2 cos(jπξ); ψ_0 = 1 has zero derivative.
    let mut stiffness = DMatrix::<f64>::zeros(k_basis, k_basis);
    let mut dpsi = vec![0.0; k_basis];
    for &(xi, wq) in &quad {
        let cw = c.eval(xi) * wq;
        for (j, d) in dpsi.iter_mut().enumerate().skip(1) {
            let jp = j as f64 * PI;
            *d = -SQRT_2 * jp * (jp * xi).sin();
        }
        for i in 1..k_basis {
            let a = cw * dpsi[i];
            for j in i..k_basis {
                stiffness[(i, j)] += a * dpsi[j];
            }
        }
    }
    for i in 0..k_basis {
        for j in 0..i {
            stiffness[(i, j)] = stiffness[(j, i)];
        }
    }

    let eig = stiffness
        .try_symmetric_eigen(1e-15, 10_000)
        .ok_or_else(|| SfhnError::EigenSolve {
            mode: 0,
            reason: "symmetric eigen-solve did not converge".into(),
        })?;

    let mut order: Vec<usize> = (0..k_basis).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut modes = vec![0.0; n_modes * m];
    let mut dmodes = vec![0.0; n_modes * m];
    let mut mu = vec![0.0; n_modes];
    for (k, &col) in order.iter().take(n_modes).enumerate() {
        let v = eig.eigenvectors.column(col);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(SfhnError::EigenSolve {
                mode: k,
                reason: "non-finite eigenvector".into(),
            });
        }
        // Fix the sign so that e_k(0) > 0, falling back to the first
        // significant coefficient when e_k(0) vanishes.
        let at_zero: f64 = v[0] + SQRT_2 * v.iter().skip(1).sum::<f64>();
        let sign = if at_zero.abs() > 1e-10 {
            at_zero.signum()
        } else {
            v.iter()
                .find(|x| x.abs() > 1e-8)
                .map(|x| x.signum())
                .unwrap_or(1.0)
        };
        mu[k] = -eig.eigenvalues[col];
        for (j, &xi) in grid.iter().enumerate() {
            let mut val = sign * v[0];
            let mut der = 0.0;
            for i in 1..k_basis {
                let ip = i as f64 * PI;
                let (s, co) = (ip * xi).sin_cos();
                val += sign * v[i] * SQRT_2 * co;
                der -= sign * v[i] * SQRT_2 * ip * s;
            }
            modes[k * m + j] = val;
            dmodes[k * m + j] = der;
        }
    }
    // The constant mode is an exact eigenvector; clean the round-off.
    mu[0] = if mu[0].abs() < 1e-9 * (1.0 + mu[n_modes - 1].abs()) {
        0.0
    } else {
        mu[0]
    };

    Ok(EigenBasis {
        mu,
        grid,
        modes,
        dmodes,
        sup_bound: 0.0,
        gram_defect: 0.0,
        constant_c: None,
        n_modes,
        n_grid: m,
    })
}

fn check_basis(mut basis: EigenBasis) -> Result<EigenBasis> {
    let n = basis.n_modes;
    if basis.mu[0].abs() > 1e-9 {
        return Err(SfhnError::EigenSolve {
            mode: 0,
            reason: format!("leading eigenvalue {} is not zero", basis.mu[0]),
        });
    }
    for k in 1..n {
        if basis.mu[k] > basis.mu[k - 1] {
            return Err(SfhnError::EigenSolve {
                mode: k,
                reason: format!(
                    "eigenvalues not nonincreasing: mu[{}] = {}, mu[{k}] = {}",
                    k - 1,
                    basis.mu[k - 1],
                    basis.mu[k]
                ),
            });
        }
    }
    let gram = basis.gram();
    let mut defect = 0.0_f64;
    for k in 0..n {
        let row: f64 = (0..n)
            .map(|l| (gram[(k, l)] - if k == l { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        if row > ORTHONORMALITY_TOL {
            return Err(SfhnError::EigenSolve {
                mode: k,
                reason: format!("discrete orthonormality defect {row:.3e}"),
            });
        }
        defect = defect.max(row);
    }
    basis.gram_defect = defect;
    basis.sup_bound = basis.modes.iter().fold(0.0, |a, v| a.max(v.abs()));
    Ok(basis)
}
