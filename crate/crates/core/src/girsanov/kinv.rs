use std::io::Write;

use rayon::prelude::*;
use statrs::function::gamma::gamma;

use super::SampledFunction;
use crate::error::{LabError, Result};
use crate::fbm::{HurstIndex, Regime, TimeGrid};
use crate::quadrature::{integrate, QuadratureConfig};

/// `𝓜 = K_H^{-1} h` at the grid nodes. Entry 0 holds the first-cell value
/// `(s_1^{-1} ∫_0^{s_1} 𝓜²)^{1/2}` (signed), since `𝓜_s ~ s^{1/2−H}` blows up at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GirsanovIntegrand {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl GirsanovIntegrand {
    /// CSV with columns `time, m_value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "m_value"])?;
        for (t, m) in self.times.iter().zip(&self.values) {
            w.write_record([t.to_string(), m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The linear map `h' ↦ K_H^{-1} h` on a fixed grid, for `h'` read as a
/// piecewise-linear function. Row `i` holds the weights of `h'(s_0..s_i)`.
#[derive(Debug, Clone)]
pub struct KInvOperator {
    grid: TimeGrid,
    alpha: f64,
    rows: Vec<Vec<f64>>,
    first_cell: f64,
}

impl KInvOperator {
    pub fn new(h: HurstIndex, grid: &TimeGrid) -> Result<Self> {
        if h.regime() != Regime::Smooth {
            return Err(LabError::Regime(format!(
                "K_H^{{-1}} is implemented for H > 1/2, got {}",
                h.value()
            )));
        }
        let a = h.value() - 0.5;
        let s = grid.times();
        let n = s.len();
        let cfg = QuadratureConfig::default();
        let g1a = gamma(1.0 - a);
        let rows: Vec<Vec<f64>> = (1..n)
            .into_par_iter()
            .map(|i| {
                let si = s[i];
                let hi = si - s[i - 1];
                // E_j = ∫_0^{s_i} (s_i^{-α}δ_{ij} − u^{-α}φ_j(u))(s_i−u)^{-α-1} du for hats φ_j.
                let mut e = vec![0.0; i + 1];
                e[i] = si.powf(-a) * (hi.powf(-a) - si.powf(-a)) / a;
                // Last cell in τ = s_i − u: no cancellation near τ = 0.
                let last_i = integrate(
                    |tau| {
                        let u = si - tau;
                        let diff = u.powf(-a) * (a * (-tau / si).ln_1p()).exp_m1();
                        diff * tau.powf(-a - 1.0) + u.powf(-a) * tau.powf(-a) / hi
                    },
                    0.0,
                    hi,
                    &[0.0, si],
                    &cfg,
                );
                e[i] += last_i;
                e[i - 1] -= integrate(|tau| (si - tau).powf(-a) * tau.powf(-a) / hi, 0.0, hi, &[0.0, si], &cfg);
                for k in 0..i - 1 {
                    let (lo, hi_k) = (s[k], s[k + 1]);
                    let w = hi_k - lo;
                    let base = |u: f64| u.powf(-a) * (si - u).powf(-a - 1.0);
                    e[k] -= integrate(|u| base(u) * (hi_k - u) / w, lo, hi_k, &[0.0, si], &cfg);
                    e[k + 1] -= integrate(|u| base(u) * (u - lo) / w, lo, hi_k, &[0.0, si], &cfg);
                }
                let scale = si.powf(a) / g1a;
                let mut row: Vec<f64> = e.iter().map(|v| scale * a * v).collect();
                row[i] += scale * si.powf(-2.0 * a);
                row
            })
            .collect();
        let first_cell = (g1a / gamma(1.0 - 2.0 * a)) * s[1].powf(-a) / (1.0 - 2.0 * a).sqrt();
        Ok(Self {
            grid: grid.clone(),
            alpha: a,
            rows,
            first_cell,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `𝓜` from the derivative values `h'(s_k)`.
    pub fn apply(&self, deriv: &[f64]) -> Result<GirsanovIntegrand> {
        if deriv.len() != self.grid.len() {
            return Err(LabError::GridMismatch(format!(
                "{} derivative values for a grid of {} nodes",
                deriv.len(),
                self.grid.len()
            )));
        }
        let mut values = Vec::with_capacity(deriv.len());
        // On the first cell h' ≈ h'(0), where 𝓜 = h'(0)Γ(1−α)/Γ(1−2α)·s^{-α}.
        values.push(deriv[0] * self.first_cell);
        for row in &self.rows {
            values.push(row.iter().zip(deriv).map(|(w, p)| w * p).sum());
        }
        Ok(GirsanovIntegrand {
            times: self.grid.times().to_vec(),
            values,
        })
    }
}

/// `K_H^{-1} h = s^{H−1/2} D^{H−1/2}_{0+}(s^{1/2−H} h')`. The derivative is
/// taken from `deriv` when given, else by central differences of `h`.
pub fn k_inv_apply(h_func: &SampledFunction, hurst: HurstIndex, deriv: Option<&[f64]>) -> Result<GirsanovIntegrand> {
    if h_func.values()[0].abs() > 1e-12 {
        return Err(LabError::Domain(format!("h(0) must vanish, got {}", h_func.values()[0])));
    }
    let grid = TimeGrid::new(h_func.times().to_vec())?;
    let owned;
    let p = match deriv {
        Some(d) => d,
        None => {
            owned = central_differences(h_func.times(), h_func.values());
            &owned
        }
    };
    KInvOperator::new(hurst, &grid)?.apply(p)
}

/// Second-order differences on a possibly non-uniform grid, one-sided at the ends.
pub fn central_differences(t: &[f64], v: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        let (h0, h1) = (t[k] - t[k - 1], t[k + 1] - t[k]);
        d[k] = (v[k + 1] - v[k]) * h0 / (h1 * (h0 + h1)) + (v[k] - v[k - 1]) * h1 / (h0 * (h0 + h1));
    }
    d[0] = (v[1] - v[0]) / (t[1] - t[0]);
    d[n - 1] = (v[n - 1] - v[n - 2]) / (t[n - 1] - t[n - 2]);
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::girsanov::{frac_derivative, FractionalOrder};

    #[test]
    fn linear_h_gives_power_law() {
        for hv in [0.6, 0.7, 0.85] {
            let h = HurstIndex::new(hv).unwrap();
            let grid = TimeGrid::uniform(64, 1.0).unwrap();
            let c = 1.7;
            let hf = SampledFunction::from_fn(grid.times(), |s| c * s).unwrap();
            let m = k_inv_apply(&hf, h, None).unwrap();
            let k = gamma(1.5 - hv) / gamma(2.0 - 2.0 * hv);
            for (s, v) in m.times.iter().zip(&m.values).skip(1) {
                let want = c * k * s.powf(0.5 - hv);
                assert!(((v - want) / want).abs() < 1e-9, "H={hv} s={s}: {v} vs {want}");
            }
            // Mean square of c k s^{-α} over the first cell.
            let s1 = grid.times()[1];
            let ms = (c * k).powi(2) * s1.powf(2.0 - 2.0 * hv) / (2.0 - 2.0 * hv) / s1;
            assert!((m.values[0] - ms.sqrt()).abs() < 1e-12 * ms.sqrt());
        }
    }

    #[test]
    fn zero_and_quadratic_h() {
        let h = HurstIndex::new(0.7).unwrap();
        let grid = TimeGrid::new((0..=40).map(|k| (k as f64 / 40.0).powi(2)).collect()).unwrap();
        let zero = SampledFunction::from_fn(grid.times(), |_| 0.0).unwrap();
        assert!(k_inv_apply(&zero, h, None).unwrap().values.iter().all(|&v| v == 0.0));
        // h = s²/2, h' = s: 𝓜 = Γ(2−α)/Γ(2−2α)·s^{1−α}.
        let a = 0.2;
        let deriv: Vec<f64> = grid.times().to_vec();
        let hf = SampledFunction::from_fn(grid.times(), |s| 0.5 * s * s).unwrap();
        let m = k_inv_apply(&hf, h, Some(&deriv)).unwrap();
        for (s, v) in m.times.iter().zip(&m.values).skip(1) {
            let want = gamma(2.0 - a) / gamma(2.0 - 2.0 * a) * s.powf(1.0 - a);
            assert!((v - want).abs() < 1e-9 * want.max(1e-3), "s={s}: {v} vs {want}");
        }
    }

    #[test]
    fn agrees_with_direct_fractional_derivative() {
        // Smooth h' vanishing at 0 keeps s^{-α}h' piecewise-linear-friendly.
        let h = HurstIndex::new(0.75).unwrap();
        let grid = TimeGrid::uniform(2000, 1.0).unwrap();
        let deriv: Vec<f64> = grid.times().iter().map(|s| (2.0 * s).sin() * s).collect();
        let hf = SampledFunction::from_fn(grid.times(), |_| 0.0).unwrap();
        let m = k_inv_apply(&hf, h, Some(&deriv)).unwrap();
        let a = 0.25;
        let g = SampledFunction::from_fn(grid.times(), |s| if s == 0.0 { 0.0 } else { s.powf(-a) * (2.0 * s).sin() * s }).unwrap();
        for k in [400, 1000, 2000] {
            let s = grid.times()[k];
            let direct = s.powf(a) * frac_derivative(FractionalOrder::new(a).unwrap(), &g, s).unwrap();
            assert!((m.values[k] - direct).abs() < 1e-4, "s={s}: {} vs {direct}", m.values[k]);
        }
    }

    #[test]
    fn rejects_rough_regime_and_bad_input() {
        let grid = TimeGrid::uniform(8, 1.0).unwrap();
        assert!(KInvOperator::new(HurstIndex::new(0.3).unwrap(), &grid).is_err());
        let hf = SampledFunction::from_fn(grid.times(), |s| s + 1.0).unwrap();
        assert!(k_inv_apply(&hf, HurstIndex::new(0.7).unwrap(), None).is_err());
        let op = KInvOperator::new(HurstIndex::new(0.7).unwrap(), &grid).unwrap();
        assert!(op.apply(&[1.0; 3]).is_err());
    }

    #[test]
    fn central_differences_exact_on_quadratics() {
        let t = [0.0, 0.1, 0.25, 0.5, 0.6];
        let v: Vec<f64> = t.iter().map(|x| 3.0 * x * x - x).collect();
        let d = central_differences(&t, &v);
        for k in 1..4 {
            assert!((d[k] - (6.0 * t[k] - 1.0)).abs() < 1e-12);
        }
    }
}
