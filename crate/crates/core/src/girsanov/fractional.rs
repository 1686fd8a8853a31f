use statrs::function::gamma::gamma;

use crate::error::{LabError, Result};

/// Order `α ∈ (0, 1)` of a Riemann–Liouville operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalOrder(f64);

impl FractionalOrder {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(LabError::Domain(format!("fractional order must lie in (0,1), got {alpha}")));
        }
        Ok(Self(alpha))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// A function known at grid nodes, read as its piecewise-linear interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl SampledFunction {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(LabError::GridMismatch(format!(
                "{} times for {} values (need at least two)",
                times.len(),
                values.len()
            )));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LabError::Domain("times must start at 0 and increase strictly".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Domain("sampled values must be finite".into()));
        }
        Ok(Self { times, values })
    }

    /// Samples `f` at `times`.
    pub fn from_fn<F: Fn(f64) -> f64>(times: &[f64], f: F) -> Result<Self> {
        Self::new(times.to_vec(), times.iter().map(|&t| f(t)).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Interpolated value at `x ∈ [0, end]`.
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.cell(x);
        let (a, b) = (self.times[k], self.times[k + 1]);
        let w = (x - a) / (b - a);
        self.values[k] + w * (self.values[k + 1] - self.values[k])
    }

    fn cell(&self, x: f64) -> usize {
        self.times.partition_point(|&t| t <= x).clamp(1, self.times.len() - 1) - 1
    }

    fn check_point(&self, x: f64) -> Result<()> {
        if !(x > 0.0) || x > self.end() * (1.0 + 1e-14) {
            return Err(LabError::Domain(format!("evaluation point {x} outside (0, {}]", self.end())));
        }
        Ok(())
    }

    /// Calls `visit(τ_near, τ_far, A, B)` for each linear piece `f(y) = A + B y`
    /// restricted to `[0, x]`, in the variable `τ = x − y`.
    fn pieces<V: FnMut(f64, f64, f64, f64)>(&self, x: f64, mut visit: V) {
        let last = self.cell(x);
        for k in 0..=last {
            let (y0, y1) = (self.times[k], self.times[k + 1].min(x));
            if y1 <= y0 {
                continue;
            }
            let slope = (self.values[k + 1] - self.values[k]) / (self.times[k + 1] - self.times[k]);
            let intercept = self.values[k] - slope * y0;
            visit(x - y1, x - y0, intercept, slope);
        }
    }
}

/// `I^α_{0+} f(x) = Γ(α)^{-1} ∫_0^x (x−y)^{α−1} f(y) dy`, integrated exactly
/// against the piecewise-linear interpolant.
pub fn frac_integral(alpha: FractionalOrder, f: &SampledFunction, x: f64) -> Result<f64> {
    f.check_point(x)?;
    let a = alpha.value();
    let mut acc = 0.0;
    f.pieces(x, |t0, t1, c, b| {
        // f = (c + b x) − b τ.
        let p0 = t1.powf(a) - t0.powf(a);
        let p1 = t1.powf(a + 1.0) - t0.powf(a + 1.0);
        acc += (c + b * x) * p0 / a - b * p1 / (a + 1.0);
    });
    Ok(acc / gamma(a))
}

/// Marchaud form `D^α_{0+} f(x) = Γ(1−α)^{-1}[f(x)x^{−α} + α∫_0^x (f(x)−f(y))(x−y)^{−α−1}dy]`,
/// integrated exactly against the piecewise-linear interpolant (the singular
/// cell then contributes in closed form).
pub fn frac_derivative(alpha: FractionalOrder, f: &SampledFunction, x: f64) -> Result<f64> {
    f.check_point(x)?;
    let a = alpha.value();
    let fx = f.eval(x);
    let mut integral = 0.0;
    f.pieces(x, |t0, t1, c, b| {
        // f(x) − f(y) = (f(x) − c − b x) + b τ; the constant part vanishes on the cell holding x.
        let offset = fx - c - b * x;
        let lin = b * (t1.powf(1.0 - a) - t0.powf(1.0 - a)) / (1.0 - a);
        let cst = if t0 == 0.0 { 0.0 } else { offset * (t0.powf(-a) - t1.powf(-a)) / a };
        integral += lin + cst;
    });
    Ok((fx * x.powf(-a) + a * integral) / gamma(1.0 - a))
}

/// [`frac_integral`] at every grid node; zero at the origin.
pub fn frac_integral_nodes(alpha: FractionalOrder, f: &SampledFunction) -> Result<Vec<f64>> {
    let mut out = vec![0.0];
    for &x in &f.times[1..] {
        out.push(frac_integral(alpha, f, x)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order(a: f64) -> FractionalOrder {
        FractionalOrder::new(a).unwrap()
    }

    fn uniform(n: usize) -> Vec<f64> {
        (0..=n).map(|k| k as f64 / n as f64).collect()
    }

    #[test]
    fn zero_and_constant() {
        let grid = uniform(50);
        let zero = SampledFunction::from_fn(&grid, |_| 0.0).unwrap();
        let one = SampledFunction::from_fn(&grid, |_| 1.0).unwrap();
        for a in [0.1, 0.25, 0.4] {
            assert_eq!(frac_integral(order(a), &zero, 0.7).unwrap(), 0.0);
            assert_eq!(frac_derivative(order(a), &zero, 0.7).unwrap(), 0.0);
            let want = 0.7f64.powf(a) / gamma(a + 1.0);
            assert!((frac_integral(order(a), &one, 0.7).unwrap() - want).abs() < 1e-13);
        }
        assert!(frac_integral(order(0.3), &one, 0.0).is_err());
        assert!(FractionalOrder::new(1.0).is_err());
    }

    #[test]
    fn power_laws() {
        let grid = uniform(4000);
        for a in [0.1, 0.25, 0.4] {
            for beta in [0.5, 1.0, 2.0] {
                let f = SampledFunction::from_fn(&grid, |y| y.powf(beta)).unwrap();
                for x in [0.3, 0.75, 1.0] {
                    let i = frac_integral(order(a), &f, x).unwrap();
                    let iw = gamma(beta + 1.0) / gamma(beta + a + 1.0) * x.powf(beta + a);
                    assert!(((i - iw) / iw).abs() < 1e-4, "I a={a} b={beta} x={x}: {i} vs {iw}");
                    let d = frac_derivative(order(a), &f, x).unwrap();
                    let dw = gamma(beta + 1.0) / gamma(beta - a + 1.0) * x.powf(beta - a);
                    assert!(((d - dw) / dw).abs() < 1e-4, "D a={a} b={beta} x={x}: {d} vs {dw}");
                }
            }
        }
    }

    #[test]
    fn derivative_inverts_integral() {
        let grid = uniform(4000);
        let f = SampledFunction::from_fn(&grid, |y| (3.0 * y).sin() + 1.0 + y * y).unwrap();
        for a in [0.1, 0.25, 0.4] {
            let g = SampledFunction::new(grid.clone(), frac_integral_nodes(order(a), &f).unwrap()).unwrap();
            for x in [0.2, 0.5, 0.9, 1.0] {
                let back = frac_derivative(order(a), &g, x).unwrap();
                assert!((back - f.eval(x)).abs() < 1e-3, "a={a} x={x}: {back}");
            }
        }
    }

    #[test]
    fn off_node_points_use_the_interpolant() {
        let f = SampledFunction::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.5, 1.0]).unwrap();
        let a = order(0.3);
        let want = gamma(2.0) / gamma(2.0 - 0.3) * 0.8f64.powf(0.7);
        assert!((frac_derivative(a, &f, 0.8).unwrap() - want).abs() < 1e-13);
    }
}
