use serde::Serialize;

use crate::error::{LabError, Result};
use crate::fbm::SamplePath;
use crate::girsanov::holder_seminorm;

/// `N_{γ,p} = ∫∫_{[a,b]²} |B_v − B_u|^{2p} / |v − u|^{2γp+2} du dv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrrFunctional {
    pub gamma: f64,
    pub p: u32,
    pub a: f64,
    pub b: f64,
}

impl GrrFunctional {
    pub fn new(gamma: f64, p: u32, a: f64, b: f64) -> Result<Self> {
        if !(gamma > 0.0) || p == 0 || !(a < b) {
            return Err(LabError::Domain(format!(
                "need γ > 0, p >= 1, a < b; got γ={gamma}, p={p}, [{a}, {b}]"
            )));
        }
        Ok(Self { gamma, p, a, b })
    }

    /// Checks `γ < H − 1/(2p)`, the range where the functional is a.s. finite.
    pub fn check_hurst(&self, h: f64) -> Result<()> {
        if !(self.gamma < h - 1.0 / (2.0 * self.p as f64)) {
            return Err(LabError::Domain(format!(
                "γ={} must be below H − 1/(2p) = {}",
                self.gamma,
                h - 1.0 / (2.0 * self.p as f64)
            )));
        }
        Ok(())
    }

    /// `8 · 4^{1/(2p)} (1 + 1/(γp))`, the constant of the Garsia–Rodemich–Rumsey
    /// inequality for `Ψ(u) = u^{2p}`, `p(u) = u^{γ + 1/p}`.
    pub fn analytic_constant(&self) -> f64 {
        let p = self.p as f64;
        8.0 * 4f64.powf(1.0 / (2.0 * p)) * (1.0 + 1.0 / (self.gamma * p))
    }
}

/// Midpoint rule on pairs of distinct observation cells of the
/// piecewise-linear path; each diagonal cell square is integrated exactly
/// (the path is linear there, so the integrand is `|slope|^{2p}|v−u|^q`).
pub fn grr_functional(path: &SamplePath, spec: &GrrFunctional) -> Result<f64> {
    let cells = interval_cells(path, spec)?;
    let p2 = 2.0 * spec.p as f64;
    let q = p2 - spec.gamma * p2 - 2.0;
    if !(q > -1.0) {
        return Err(LabError::Domain(format!("exponent 2p(1−γ) − 2 = {q} makes the diagonal diverge")));
    }
    let dim = path.dim();
    let mids: Vec<(f64, Vec<f64>, f64)> = cells
        .iter()
        .map(|&k| {
            let (t0, t1) = (path.grid().times()[k], path.grid().times()[k + 1]);
            let v: Vec<f64> = (0..dim).map(|c| 0.5 * (path.at(k)[c] + path.at(k + 1)[c])).collect();
            (0.5 * (t0 + t1), v, t1 - t0)
        })
        .collect();
    let mut acc = 0.0;
    for (idx, &k) in cells.iter().enumerate() {
        let h = mids[idx].2;
        let slope2: f64 = (0..dim).map(|c| ((path.at(k + 1)[c] - path.at(k)[c]) / h).powi(2)).sum();
        acc += slope2.powf(0.5 * p2) * 2.0 * h.powf(q + 2.0) / ((q + 1.0) * (q + 2.0));
        for jdx in idx + 1..cells.len() {
            let (tu, ref vu, hu) = mids[idx];
            let (tv, ref vv, hv) = mids[jdx];
            let d2: f64 = vu.iter().zip(vv).map(|(a, b)| (a - b) * (a - b)).sum();
            acc += 2.0 * d2.powf(0.5 * p2) / (tv - tu).powf(spec.gamma * p2 + 2.0) * hu * hv;
        }
    }
    Ok(acc)
}

/// Hölder seminorm of order `γ` of the path restricted to `[a, b]`.
pub fn holder_on_interval(path: &SamplePath, spec: &GrrFunctional) -> Result<f64> {
    let cells = interval_cells(path, spec)?;
    let (first, last) = (cells[0], *cells.last().unwrap() + 1);
    let times = path.grid().times()[first..=last].to_vec();
    let grid = crate::fbm::TimeGrid::new(times.iter().map(|t| t - times[0]).collect())?;
    let vals = path.raw()[first * path.dim()..(last + 1) * path.dim()].to_vec();
    holder_seminorm(&SamplePath::new(grid, path.dim(), vals, path.label())?, spec.gamma)
}

fn interval_cells(path: &SamplePath, spec: &GrrFunctional) -> Result<Vec<usize>> {
    let times = path.grid().times();
    let tol = 1e-12 * spec.b.abs().max(1.0);
    let ia = times.iter().position(|&t| (t - spec.a).abs() <= tol);
    let ib = times.iter().position(|&t| (t - spec.b).abs() <= tol);
    match (ia, ib) {
        (Some(i), Some(j)) if i < j => Ok((i..j).collect()),
        _ => Err(LabError::GridMismatch(format!(
            "[{}, {}] is not spanned by grid nodes",
            spec.a, spec.b
        ))),
    }
}

/// Calibrated `c_{γ,p}` and its hold-out check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrrCalibration {
    pub constant: f64,
    pub analytic_constant: f64,
    pub fit_max_ratio: f64,
    pub holdout_max_ratio: f64,
    pub violations: usize,
    pub analytic_violations: usize,
}

/// Ratio `‖B‖_γ / N^{1/(2p)}` on one path.
pub fn grr_ratio(path: &SamplePath, spec: &GrrFunctional) -> Result<f64> {
    let n = grr_functional(path, spec)?;
    let hol = holder_on_interval(path, spec)?;
    Ok(if n > 0.0 { hol / n.powf(1.0 / (2.0 * spec.p as f64)) } else { 0.0 })
}

/// Constant = `margin` × largest fit ratio; counts hold-out violations of it
/// and of the analytic constant.
pub fn calibrate_grr(fit: &[SamplePath], holdout: &[SamplePath], spec: &GrrFunctional, margin: f64) -> Result<GrrCalibration> {
    let fit_r = fit.iter().map(|p| grr_ratio(p, spec)).collect::<Result<Vec<_>>>()?;
    let hold_r = holdout.iter().map(|p| grr_ratio(p, spec)).collect::<Result<Vec<_>>>()?;
    let fit_max = fit_r.iter().copied().fold(0.0, f64::max);
    let constant = margin * fit_max;
    let analytic = spec.analytic_constant();
    Ok(GrrCalibration {
        constant,
        analytic_constant: analytic,
        fit_max_ratio: fit_max,
        holdout_max_ratio: hold_r.iter().copied().fold(0.0, f64::max),
        violations: hold_r.iter().filter(|&&r| r > constant).count(),
        analytic_violations: hold_r.iter().chain(&fit_r).filter(|&&r| r > analytic).count(),
    })
}
