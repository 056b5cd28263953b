//! Small dense helpers: closed-form 2×2 matrix functions, the 2×2
//! continuous Lyapunov equation and Gauss–Legendre rules.
//!
//! Every Galerkin mode of the linear part is a 2×2 real system, so these
//! routines sit on the hot path of the integrator and are written without
//! allocation.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

pub type Mat2 = Matrix2<f64>;
pub type Vec2 = Vector2<f64>;

/// `exp(t·M)` for a real 2×2 matrix.
///
/// Uses Cayley–Hamilton: with `τ = tr M / 2` and `δ² = τ² − det M`,
/// `(M − τI)² = δ² I`, so the exponential is a combination of `I` and
/// `M − τI` with scalar weights. Complex eigenpairs (δ² < 0) are handled
/// with `cos`/`sin`, so no complex arithmetic is needed.
pub fn expm2(m: &Mat2, t: f64) -> Mat2 {
    let tau = 0.5 * m.trace();
    let disc = tau * tau - m.determinant();
    let shifted = m - Mat2::identity() * tau;

    let (even, odd) = if disc > 0.0 {
        let d = disc.sqrt();
        if (d * t).abs() < 1.0 {
            let e = (tau * t).exp();
            (e * (d * t).cosh(), e * (d * t).sinh() / d)
        } else {
            // Split into the two real exponentials to avoid cosh overflow
            // when the eigenvalues are far apart.
            let ep = ((tau + d) * t).exp();
            let em = ((tau - d) * t).exp();
            (0.5 * (ep + em), (ep - em) / (2.0 * d))
        }
    } else if disc < 0.0 {
        let d = (-disc).sqrt();
        let e = (tau * t).exp();
        (e * (d * t).cos(), e * (d * t).sin() / d)
    } else {
        let e = (tau * t).exp();
        (e, e * t)
    };
    Mat2::identity() * even + shifted * odd
}

/// `M⁻¹ (exp(t·M) − I)`, i.e. `t·φ₁(tM)` with `φ₁(z) = (eᶻ − 1)/z`.
///
/// Returns `None` when `M` is singular. Near `t → 0` a short Taylor series
/// replaces the difference quotient.
pub fn phi1_scaled(m: &Mat2, t: f64) -> Option<Mat2> {
    let norm = m.abs().max();
    if norm * t.abs() < 1e-3 {
        // t (I + tM/2 + t²M²/6 + t³M³/24)
        let tm = m * t;
        let tm2 = tm * tm;
        let tm3 = tm2 * tm;
        return Some((Mat2::identity() + tm / 2.0 + tm2 / 6.0 + tm3 / 24.0) * t);
    }
    let inv = m.try_inverse()?;
    Some(inv * (expm2(m, t) - Mat2::identity()))
}

/// Solves `M Σ + Σ Mᵀ + Q = 0` for symmetric `Σ` (2×2).
///
/// Writes the unknown as `(Σ₁₁, Σ₁₂, Σ₂₂)` and solves the resulting 3×3
/// linear system. Returns `None` if the system is singular, which happens
/// exactly when two eigenvalues of `M` sum to zero.
pub fn lyapunov2(m: &Mat2, q: &Mat2) -> Option<Mat2> {
    let (m11, m12, m21, m22) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let sys = Matrix3::new(
        2.0 * m11,
        2.0 * m12,
        0.0,
        m21,
        m11 + m22,
        m12,
        0.0,
        2.0 * m21,
        2.0 * m22,
    );
    let rhs = Vector3::new(-q[(0, 0)], -0.5 * (q[(0, 1)] + q[(1, 0)]), -q[(1, 1)]);
    let lu = sys.lu();
    let det = lu.determinant();
    let scale = sys.abs().max().powi(3).max(f64::MIN_POSITIVE);
    if !det.is_finite() || det.abs() <= 1e-14 * scale {
        return None;
    }
    let sol = lu.solve(&rhs)?;
    Some(Mat2::new(sol[0], sol[1], sol[1], sol[2]))
}

/// Lower-triangular factor of a symmetric positive semidefinite 2×2 matrix.
///
/// Tolerates exact zeros (deterministic modes) and tiny negative round-off
/// on the diagonal.
pub fn cholesky2_psd(s: &Mat2) -> Mat2 {
    let a = s[(0, 0)].max(0.0);
    let b = 0.5 * (s[(0, 1)] + s[(1, 0)]);
    let l11 = a.sqrt();
    let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
    let l22 = (s[(1, 1)] - l21 * l21).max(0.0).sqrt();
    Mat2::new(l11, 0.0, l21, l22)
}

/// Largest real part among the eigenvalues of a 2×2 matrix.
pub fn max_real_eigenvalue(m: &Mat2) -> f64 {
    let tau = 0.5 * m.trace();
    let disc = tau * tau - m.determinant();
    if disc >= 0.0 {
        tau + disc.sqrt()
    } else {
        tau
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss–Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre rule on `[a, b]` with `panels` equal panels of
/// `order` nodes each.
pub fn composite_gauss_legendre(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((mid + 0.5 * h * xi, 0.5 * h * wi));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn max_abs(m: &Mat2) -> f64 {
        m.abs().max()
    }

    #[test]
    fn expm_matches_pade_for_all_eigen_regimes() {
        let cases = [
            Mat2::new(-0.05, -1.0, 0.5, -1.0),   // complex pair
            Mat2::new(-9.0, -1.0, 0.5, -1.0),    // distinct real
            Mat2::new(-1.0, 1.0, 0.0, -1.0),     // defective
            Mat2::new(-9490.0, -1.0, 0.5, -1.0), // stiff
        ];
        for m in cases {
            for &t in &[1e-6, 1e-3, 0.37, 2.0] {
                let ours = expm2(&m, t);
                let reference = (m * t).exp();
                assert!(
                    max_abs(&(ours - reference)) <= 1e-12 * (1.0 + max_abs(&reference)),
                    "m = {m:?}, t = {t}"
                );
            }
        }
    }

    #[test]
    fn expm_no_overflow_for_long_stiff_horizons() {
        let m = Mat2::new(-9490.0, -1.0, 0.5, -1.0);
        let e = expm2(&m, 100.0);
        assert!(e.iter().all(|v| v.is_finite()));
        assert!(max_abs(&e) < 1e-40);
    }

    #[test]
    fn phi1_agrees_with_quadrature() {
        let m = Mat2::new(-0.8, -1.0, 0.5, -1.0);
        let t = 0.3;
        let ours = phi1_scaled(&m, t).unwrap();
        let nodes = composite_gauss_legendre(0.0, t, 8, 8);
        let mut quad = Mat2::zeros();
        for (s, w) in nodes {
            quad += expm2(&m, s) * w;
        }
        assert!(max_abs(&(ours - quad)) < 1e-14);
        let tiny = phi1_scaled(&m, 1e-6).unwrap();
        assert_relative_eq!(tiny[(0, 0)], 1e-6, max_relative = 1e-6);
    }

    #[test]
    fn lyapunov_hand_solution_for_shifted_mode_zero() {
        let m = Mat2::new(-0.05, -1.0, 0.5, -1.0);
        let q = Mat2::new(0.01, 0.0, 0.0, 0.01);
        let s = lyapunov2(&m, &q).unwrap();
        assert_relative_eq!(s[(0, 0)], 0.022078, epsilon = 5e-7);
        assert_relative_eq!(s[(0, 1)], 0.0038961, epsilon = 5e-8);
        assert_relative_eq!(s[(1, 1)], 0.0069481, epsilon = 5e-8);
        let residual = m * s + s * m.transpose() + q;
        assert!(max_abs(&residual) < 1e-15);
    }

    #[test]
    fn lyapunov_rejects_marginal_matrix() {
        let m = Mat2::new(0.0, 1.0, -1.0, 0.0);
        assert!(lyapunov2(&m, &Mat2::identity()).is_none());
    }

    #[test]
    fn cholesky_handles_degenerate_covariances() {
        let l = cholesky2_psd(&Mat2::zeros());
        assert_eq!(l, Mat2::zeros());
        let s = Mat2::new(4.0, 2.0, 2.0, 5.0);
        let l = cholesky2_psd(&s);
        assert!(max_abs(&(l * l.transpose() - s)) < 1e-14);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let quad: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((quad - exact).abs() < 1e-13, "n = {n}, deg = {deg}");
            }
        }
    }
}
