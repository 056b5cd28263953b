//! Spectral-Galerkin simulation of the stochastic FitzHugh–Nagumo system
//! with Neumann boundary conditions, together with the diagnostics used to
//! check its dissipativity, ergodicity and Kolmogorov-operator properties.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod model;

pub use error::{Result, SfhnError};
pub use model::{Channel, DerivedConstants, EigenBasis, Model, ModelParams, Profile, StateH};
pub mod nonlinearity;
pub mod stats;
pub mod noise;
pub mod solver;
pub mod ergodics;
pub mod kolmogorov;
