//! Riemann–Liouville operators, the inverse kernel operator `K_H^{-1}`, and
//! the Girsanov density `ξ` of the one-dimensional multiplicative case.

mod density;
mod fractional;
mod kinv;

pub use density::{
    fit_domination, holder_seminorm, write_xi_csv, xi_compute, DominationFit, GirsanovDensity, GirsanovSample, GirsanovSetup,
    XI_EXPONENT_CAP,
};
pub use fractional::{frac_derivative, frac_integral, frac_integral_nodes, FractionalOrder, SampledFunction};
pub use kinv::{central_differences, k_inv_apply, GirsanovIntegrand, KInvOperator};
