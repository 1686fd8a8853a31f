//! Numerical laboratory for fractional Brownian motion and the Gaussian
//! density bounds of the differential equations it drives.
//!
//! The crate is organised by subsystem:
//!
//! * [`fbm`]: covariance, Volterra kernel, exact and Volterra samplers.
//! * [`hilbert`]: inner products of the reproducing kernel space, increment
//!   Gram matrices and the box-constrained bilinear program.
//! * [`sde`]: Young–Euler, additive ODE reduction, Doss–Sussmann flow and the
//!   explicit Malliavin derivative of the additive equation.
//! * [`girsanov`]: fractional integrals and derivatives, the Girsanov
//!   integrand and density.
//! * [`scheme`]: kernel-equalized partitions, the Euler split of the solution,
//!   conditional covariances, GRR functionals, localization and chaining.
//! * [`nv_density`]: the Ornstein–Uhlenbeck coupling estimator of `g(F)` and
//!   the two-sided density bounds it implies.
//! * [`lab`]: KDE, bound fitting, configuration and experiment orchestration.

pub mod error;
pub mod fbm;
pub mod girsanov;
pub mod hilbert;
pub mod lab;
pub mod nv_density;
pub mod quadrature;
pub mod rng;
pub mod scheme;
pub mod sde;
pub mod stats;

pub use error::{LabError, Result};
