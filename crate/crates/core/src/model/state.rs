use serde::{Deserialize, Serialize};

/// Element of `H = L² × L²` in truncated spectral coordinates.
///
/// `u` holds the voltage coefficients and `w` the recovery coefficients,
/// both with respect to the eigenbasis of the diffusion operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateH {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
}

impl StateH {
    pub fn zeros(n: usize) -> Self {
        StateH {
            u: vec![0.0; n],
            w: vec![0.0; n],
        }
    }

    pub fn new(u: Vec<f64>, w: Vec<f64>) -> Self {
        assert_eq!(u.len(), w.len(), "u and w must have the same length");
        StateH { u, w }
    }

    /// Single basis direction: `coeff` on mode `k` of the chosen channel.
    pub fn unit(n: usize, k: usize, channel: Channel, coeff: f64) -> Self {
        let mut s = StateH::zeros(n);
        match channel {
            Channel::U => s.u[k] = coeff,
            Channel::W => s.w[k] = coeff,
        }
        s
    }

    pub fn n_modes(&self) -> usize {
        self.u.len()
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.w).all(|v| v.is_finite())
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &StateH) {
        for (x, y) in self.u.iter_mut().zip(&other.u) {
            *x += a * y;
        }
        for (x, y) in self.w.iter_mut().zip(&other.w) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: f64) -> StateH {
        StateH {
            u: self.u.iter().map(|v| a * v).collect(),
            w: self.w.iter().map(|v| a * v).collect(),
        }
    }

    pub fn sub(&self, other: &StateH) -> StateH {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn add(&self, other: &StateH) -> StateH {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    U,
    W,
}
