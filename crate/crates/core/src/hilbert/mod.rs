//! The reproducing kernel Hilbert space ℋ of fBm: inner products of step
//! functions, increment Gram matrices, the box-constrained bilinear program
//! and the fractional-derivative norm bound for `H < 1/2`.

mod gram;
mod hnorm;
mod qp;
mod step;

pub use gram::{increment_gram, inner_rough, inner_smooth, IncrementGram, RoughInner};
pub use hnorm::{envelope_constant, hnorm_upper_rough, HnormReport, HolderBoundInputs};
pub use qp::{bilinear, check_admissible, format_matrix, parse_matrix, qp_box_inf, qp_box_search, random_admissible, QpSearchConfig};
pub use step::StepFunction;
