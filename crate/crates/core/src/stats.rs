//! Small statistics toolkit for Monte Carlo summaries.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n == 0 {
        return MeanSe { mean: f64::NAN, se: f64::NAN, n };
    }
    // identical samples would otherwise pick up rounding in the sum
    if xs.iter().all(|x| *x == xs[0]) {
        return MeanSe { mean: xs[0], se: 0.0, n };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    MeanSe { mean, se, n }
}

/// Unbiased sample covariance of paired samples.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    assert_eq!(n, ys.len());
    assert!(n > 1, "covariance needs at least two samples");
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (n - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
pub fn ols(xs: &[f64], ys: &[f64]) -> OlsFit {
    let n = xs.len() as f64;
    assert_eq!(xs.len(), ys.len());
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    OlsFit { slope, intercept, r2 }
}

/// Fits `log y ≈ a + b t` over the samples with `t` in `[lo, hi]` and
/// `y > 0`. Returns `None` with fewer than three usable points.
pub fn log_linear_fit(ts: &[f64], ys: &[f64], lo: f64, hi: f64) -> Option<OlsFit> {
    let (xs, ls): (Vec<f64>, Vec<f64>) = ts
        .iter()
        .zip(ys)
        .filter(|(t, y)| **t >= lo && **t <= hi && **y > 0.0 && y.is_finite())
        .map(|(t, y)| (*t, y.ln()))
        .unzip();
    (xs.len() >= 3).then(|| ols(&xs, &ls))
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic 5% critical value of the two-sample KS statistic.
pub fn ks_two_sample_critical(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    1.358 * ((n + m) / (n * m)).sqrt()
}

/// One-sample KS statistic against `N(mean, sd²)`.
pub fn ks_normal(samples: &[f64], mean: f64, sd: f64) -> f64 {
    let dist = Normal::new(mean, sd).expect("normal parameters must be valid");
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = dist.cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 5% critical value of the one-sample KS statistic.
pub fn ks_one_sample_critical(n: usize) -> f64 {
    1.358 / (n as f64).sqrt()
}

/// Linear-interpolation quantile (`q ∈ [0, 1]`) of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, q)
}

fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    if s.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < s.len() {
        s[i] * (1.0 - frac) + s[i + 1] * frac
    } else {
        s[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// Probability mass per bin; sums to one.
    pub mass: Vec<f64>,
}

impl Histogram {
    /// Freedman–Diaconis bin width `2·IQR·n^{−1/3}`, capped at 200 bins.
    /// Degenerate data (zero spread) gives a single bin holding all mass.
    pub fn freedman_diaconis(xs: &[f64]) -> Histogram {
        let mut s = xs.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        if n == 0 {
            return Histogram { edges: vec![0.0, 0.0], mass: vec![] };
        }
        let (lo, hi) = (s[0], s[n - 1]);
        let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
        let width = 2.0 * iqr / (n as f64).cbrt();
        let bins = if hi > lo && width > 0.0 {
            (((hi - lo) / width).ceil() as usize).clamp(1, 200)
        } else {
            1
        };
        let span = if hi > lo { hi - lo } else { 1.0 };
        let edges: Vec<f64> = (0..=bins)
            .map(|i| lo + span * i as f64 / bins as f64)
            .collect();
        let mut counts = vec![0usize; bins];
        for &x in &s {
            let b = (((x - lo) / span) * bins as f64).floor() as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let mass = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Histogram { edges, mass }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lo,hi,mass\n");
        for (i, m) in self.mass.iter().enumerate() {
            out.push_str(&format!("{:.17e},{:.17e},{:.17e}\n", self.edges[i], self.edges[i + 1], m));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn ols_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let fit = ols(&xs, &ys);
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_se_of_constant_sample() {
        let m = mean_se(&[2.0; 5]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.se, 0.0);
    }

    #[test]
    fn ks_detects_shift_and_accepts_same_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let c: Vec<f64> = b.iter().map(|x| x + 0.3).collect();
        let crit = ks_two_sample_critical(2000, 2000);
        assert!(ks_two_sample(&a, &b) < crit);
        assert!(ks_two_sample(&a, &c) > crit);
        assert!(ks_normal(&a, 0.0, 1.0) < ks_one_sample_critical(2000));
        assert!(ks_normal(&c, 0.0, 1.0) > ks_one_sample_critical(2000));
    }

    #[test]
    fn ks_of_identical_samples_is_zero() {
        let a = [1.0, 2.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
    }

    #[test]
    fn histogram_mass_sums_to_one() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64).collect();
        let h = Histogram::freedman_diaconis(&xs);
        assert!((h.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let single = Histogram::freedman_diaconis(&[0.0; 10]);
        assert_eq!(single.mass, vec![1.0]);
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert!((quantile(&xs, 0.5) - 2.5).abs() < 1e-15);
    }
}
