use crate::error::{LabError, Result};
use crate::fbm::SamplePath;
use crate::quadrature::{gauss_on, legendre_rule, Rule};

/// Cumulative integral of `V_0'(X)` along the piecewise-linear interpolant of a
/// one-dimensional path, 4-point Gauss–Legendre per cell.
pub struct DriftLogIntegral<F: Fn(f64) -> f64> {
    times: Vec<f64>,
    x: Vec<f64>,
    cumulative: Vec<f64>,
    rule: Rule,
    v0_deriv: F,
}

const CELL_NODES: usize = 4;

impl<F: Fn(f64) -> f64> DriftLogIntegral<F> {
    pub fn new(x_path: &SamplePath, v0_deriv: F) -> Self {
        let times = x_path.grid().times().to_vec();
        let x: Vec<f64> = (0..times.len()).map(|k| x_path.at(k)[0]).collect();
        let mut out = Self {
            cumulative: vec![0.0; times.len()],
            times,
            x,
            rule: legendre_rule(CELL_NODES),
            v0_deriv,
        };
        for k in 1..out.times.len() {
            out.cumulative[k] = out.cumulative[k - 1] + out.partial(k - 1, out.times[k]);
        }
        out
    }

    /// Integral over `[times[k], s]` inside cell `k`.
    fn partial(&self, k: usize, s: f64) -> f64 {
        let (a, b) = (self.times[k], self.times[k + 1]);
        let (x0, x1) = (self.x[k], self.x[k + 1]);
        let u = (s - a) / (b - a);
        gauss_on(&self.rule, 0.0, u, |v| (self.v0_deriv)(x0 + v * (x1 - x0))) * (b - a)
    }

    /// `∫_0^s V_0'(X_u) du`.
    pub fn at(&self, s: f64) -> Result<f64> {
        let end = *self.times.last().unwrap();
        let tol = 1e-12 * end.max(1.0);
        if s < -tol || s > end + tol {
            return Err(LabError::GridMismatch(format!("time {s} outside the path grid [0, {end}]")));
        }
        let s = s.clamp(0.0, end);
        let j = self.times.partition_point(|&x| x <= s).clamp(1, self.times.len() - 1);
        Ok(self.cumulative[j - 1] + self.partial(j - 1, s))
    }

    /// `D_r X_t = σ exp(∫_r^t V_0'(X_s) ds)`.
    pub fn derivative(&self, r: f64, t: f64, sigma: f64) -> Result<f64> {
        if r > t {
            return Err(LabError::Ordering(format!("need r <= t, got r={r}, t={t}")));
        }
        Ok(sigma * (self.at(t)? - self.at(r)?).exp())
    }

    /// `r ↦ D_r X_t` at the grid nodes `r ≤ t`.
    pub fn profile(&self, t: f64, sigma: f64) -> Result<Vec<f64>> {
        let ct = self.at(t)?;
        Ok(self
            .times
            .iter()
            .take_while(|&&r| r <= t + 1e-12)
            .zip(&self.cumulative)
            .map(|(_, c)| sigma * (ct - c).exp())
            .collect())
    }
}

/// Malliavin derivative `D_r X_t` of the additive equation `dX = V_0(X)dt + σ dB`.
pub fn malliavin_deriv_additive<F: Fn(f64) -> f64>(r: f64, t: f64, x_path: &SamplePath, v0_deriv: F, sigma: f64) -> Result<f64> {
    DriftLogIntegral::new(x_path, v0_deriv).derivative(r, t, sigma)
}

/// `D_rX_t` as the solution of `Y' = V_0'(X_s)Y`, `Y_r = σ`, by RK4 with
/// `substeps` steps per cell along the piecewise-linear path.
pub fn variational_derivative<F: Fn(f64) -> f64>(
    r: f64,
    t: f64,
    x_path: &SamplePath,
    v0_deriv: F,
    sigma: f64,
    substeps: usize,
) -> Result<f64> {
    if r > t {
        return Err(LabError::Ordering(format!("need r <= t, got r={r}, t={t}")));
    }
    let times = x_path.grid().times();
    if r < 0.0 || t > *times.last().unwrap() * (1.0 + 1e-12) {
        return Err(LabError::GridMismatch(format!("[{r}, {t}] outside the path grid")));
    }
    let mut x = [0.0];
    let mut g = |s: f64| {
        x_path.interpolate(s, &mut x);
        v0_deriv(x[0])
    };
    let mut knots = vec![r];
    knots.extend(times.iter().copied().filter(|&s| s > r && s < t));
    knots.push(t);
    let mut y = sigma;
    for w in knots.windows(2) {
        let dt = (w[1] - w[0]) / substeps.max(1) as f64;
        for k in 0..substeps.max(1) {
            let s = w[0] + k as f64 * dt;
            let (gs, gm, ge) = (g(s), g(s + 0.5 * dt), g(s + dt));
            let k1 = gs * y;
            let k2 = gm * (y + 0.5 * dt * k1);
            let k3 = gm * (y + 0.5 * dt * k2);
            let k4 = ge * (y + dt * k3);
            y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    Ok(y)
}
