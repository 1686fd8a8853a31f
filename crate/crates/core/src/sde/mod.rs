//! Pathwise solvers for fBm-driven equations: Young-Euler for `H > 1/2`, the
//! ODE reduction of the additive one-dimensional case, the Doss–Sussmann flow
//! for the multiplicative one-dimensional case, and the explicit Malliavin
//! derivative of the additive case.

mod fields;
mod flow;
mod malliavin;
mod solvers;

pub use fields::{FieldKind, FieldParams, VectorFieldSet};
pub use flow::{doss_sussmann_flow, flow_inverse, FlowMap, FLOW_STEP};
pub use malliavin::{malliavin_deriv_additive, variational_derivative, DriftLogIntegral};
pub use solvers::{solve_additive_ode, solve_doss_sussmann, solve_young_euler, young_euler_full, SdeProblem, SolveMode, DIVERGENCE_CAP};
