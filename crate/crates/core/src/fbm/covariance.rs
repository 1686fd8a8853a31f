use nalgebra::DMatrix;

use super::{HurstIndex, TimeGrid};
use crate::error::{LabError, Result};

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(LabError::Domain(format!("time {t} outside [0, 1]")))
    }
}

/// fBm covariance `R(s, t) = ½(s^{2H} + t^{2H} − |t−s|^{2H})`.
pub fn cov_r(s: f64, t: f64, h: HurstIndex) -> Result<f64> {
    check_time(s)?;
    check_time(t)?;
    Ok(cov_unchecked(s, t, h.two_h()))
}

#[inline]
pub(crate) fn cov_unchecked(s: f64, t: f64, two_h: f64) -> f64 {
    0.5 * (s.powf(two_h) + t.powf(two_h) - (t - s).abs().powf(two_h))
}

/// Variance of an increment, `|t − s|^{2H}`.
pub fn increment_variance(s: f64, t: f64, h: HurstIndex) -> Result<f64> {
    check_time(s)?;
    check_time(t)?;
    Ok((t - s).abs().powf(h.two_h()))
}

/// `E[(B_b − B_a)(B_d − B_c)]` for one coordinate.
#[inline]
pub fn increment_covariance(a: f64, b: f64, c: f64, d: f64, h: HurstIndex) -> f64 {
    let p = h.two_h();
    0.5 * ((b - c).abs().powf(p) + (a - d).abs().powf(p) - (a - c).abs().powf(p) - (b - d).abs().powf(p))
}

/// Covariance matrix of `(B_{t_1}, …, B_{t_n})` over the nonzero grid nodes.
pub fn covariance_matrix(grid: &TimeGrid, h: HurstIndex) -> DMatrix<f64> {
    let t = &grid.times()[1..];
    let n = t.len();
    let p = h.two_h();
    DMatrix::from_fn(n, n, |i, j| cov_unchecked(t[i], t[j], p))
}
