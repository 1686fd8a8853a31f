//! The discretization scheme for the multidimensional lower bound: the
//! equal-energy partition, the Euler split `F_i = F_{i-1} + I_i + R_i`, the
//! conditional Gaussian main term, the Garsia–Rodemich–Rumsey functional,
//! localization functions and the chaining construction.

mod chain;
mod gaussian;
mod grr;
mod localization;
mod partition;
mod split;

pub use chain::{chain_construct, Chain};
pub use gaussian::{conditional_cov, gaussian_lower_bound, gaussian_main_term};
pub use grr::{calibrate_grr, grr_functional, grr_ratio, holder_on_interval, GrrCalibration, GrrFunctional};
pub use localization::{bump_constant, localization_eval, localization_params, LocalizationFn};
pub use partition::{build_partition, Partition};
pub use split::{remainder_ratio, EulerSplit, EulerSplitter, RemainderRatio};
