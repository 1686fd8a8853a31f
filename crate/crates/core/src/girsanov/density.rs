use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{GirsanovIntegrand, KInvOperator};
use crate::error::{LabError, Result};
use crate::fbm::{wiener_path, HurstIndex, KernelTable, SamplePath, TimeGrid, VolterraOperator};
use crate::rng::StreamFamily;
use crate::sde::{FlowMap, VectorFieldSet};

/// Exponents above this are capped and flagged.
pub const XI_EXPONENT_CAP: f64 = 700.0;

/// `ξ = exp(S − D/2)` with `S = ∫𝓜 dW'` and `D = ∫𝓜² ds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GirsanovDensity {
    pub s: f64,
    pub d: f64,
    pub xi: f64,
    pub capped: bool,
}

/// Left-point sums for both `S` and `D`, so that `ξ` is an exact discrete
/// martingale: `E[ξ] = 1` holds at every mesh, not only in the limit.
pub fn xi_compute(m: &GirsanovIntegrand, w: &SamplePath, t: f64) -> Result<GirsanovDensity> {
    let times = w.grid().times();
    if w.dim() != 1 || m.times.len() != times.len() || m.times.iter().zip(times).any(|(a, b)| a != b) {
        return Err(LabError::GridMismatch(
            "integrand and Wiener path must share a one-dimensional grid".into(),
        ));
    }
    if (w.grid().terminal() - t).abs() > 1e-12 * t.max(1.0) {
        return Err(LabError::GridMismatch(format!(
            "grid ends at {}, expected {t}",
            w.grid().terminal()
        )));
    }
    let mut s = 0.0;
    let mut d = 0.0;
    for k in 0..times.len() - 1 {
        let mk = m.values[k];
        s += mk * (w.at(k + 1)[0] - w.at(k)[0]);
        d += mk * mk * (times[k + 1] - times[k]);
    }
    let expo = s - 0.5 * d;
    let capped = expo > XI_EXPONENT_CAP;
    Ok(GirsanovDensity {
        s,
        d,
        xi: expo.min(XI_EXPONENT_CAP).exp(),
        capped,
    })
}

/// Discrete `sup |g_v − g_u| / |v − u|^γ` over grid pairs (Euclidean norm).
pub fn holder_seminorm(path: &SamplePath, exponent: f64) -> Result<f64> {
    if !(exponent > 0.0 && exponent < 1.0) {
        return Err(LabError::Domain(format!("Hölder exponent must lie in (0,1), got {exponent}")));
    }
    let t = path.grid().times();
    let mut best = 0.0f64;
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            let dist: f64 = path
                .at(i)
                .iter()
                .zip(path.at(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            best = best.max(dist / (t[j] - t[i]).powf(exponent));
        }
    }
    Ok(best)
}

/// ξ batch CSV with columns `path_id, S, D, xi`.
pub fn write_xi_csv<W: Write>(batch: &[GirsanovDensity], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_id", "S", "D", "xi"])?;
    for (i, g) in batch.iter().enumerate() {
        w.write_record([i.to_string(), g.s.to_string(), g.d.to_string(), g.xi.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One path of the Doss–Sussmann/Girsanov construction.
#[derive(Debug, Clone)]
pub struct GirsanovSample {
    pub density: GirsanovDensity,
    pub integrand: GirsanovIntegrand,
    /// `‖B'‖_{H−1/2}` on the grid.
    pub holder: f64,
    /// `Y_t = F(B'_t, a)`.
    pub y_terminal: f64,
}

impl GirsanovSample {
    /// `max_s |𝓜_s| / β_s` with `β_s = s^{1/2−H} + ‖B'‖_{H−1/2}`, over `s > 0`.
    pub fn domination_ratio(&self, h: f64) -> f64 {
        self.integrand
            .times
            .iter()
            .zip(&self.integrand.values)
            .skip(1)
            .map(|(s, m)| m.abs() / (s.powf(0.5 - h) + self.holder))
            .fold(0.0, f64::max)
    }
}

/// Precomputed operators for `𝓜 = K_H^{-1}(∫V_0V_1^{-1}(Y))`, `Y = F(B', a)`,
/// with `B'` built from `W'` by the Volterra sum on a uniform grid.
#[derive(Debug, Clone)]
pub struct GirsanovSetup {
    fields: VectorFieldSet,
    a: f64,
    h: HurstIndex,
    grid: TimeGrid,
    volterra: VolterraOperator,
    kinv: KInvOperator,
    flow: FlowMap,
}

impl GirsanovSetup {
    pub fn new(fields: VectorFieldSet, a: f64, h: HurstIndex, t: f64, cells: usize) -> Result<Self> {
        if fields.m() != 1 {
            return Err(LabError::Config("the Girsanov construction is one-dimensional".into()));
        }
        let grid = TimeGrid::uniform(cells, t)?;
        let table = KernelTable::new(h, t)?;
        let volterra = VolterraOperator::new(&table, &grid, &grid)?;
        let kinv = KInvOperator::new(h, &grid)?;
        let flow = FlowMap::new(&fields, a, 8.0)?;
        Ok(Self {
            fields,
            a,
            h,
            grid,
            volterra,
            kinv,
            flow,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hurst(&self) -> HurstIndex {
        self.h
    }

    pub fn initial(&self) -> f64 {
        self.a
    }

    pub fn sample(&self, family: &StreamFamily, index: u64) -> Result<GirsanovSample> {
        let w = wiener_path(&self.grid, 1, family, index);
        let b = self.volterra.apply(&w)?;
        let deriv: Vec<f64> = (0..self.grid.len())
            .map(|k| {
                let y = self.flow.eval(b.at(k)[0]);
                self.fields.v0(y) / self.fields.v1(y)
            })
            .collect();
        let integrand = self.kinv.apply(&deriv)?;
        let density = xi_compute(&integrand, &w, self.grid.terminal())?;
        let holder = holder_seminorm(&b, self.h.value() - 0.5)?;
        Ok(GirsanovSample {
            density,
            integrand,
            holder,
            y_terminal: self.flow.eval(b.terminal()[0]),
        })
    }

    pub fn batch(&self, family: &StreamFamily, start: u64, n: usize) -> Result<Vec<GirsanovSample>> {
        (start..start + n as u64).into_par_iter().map(|i| self.sample(family, i)).collect()
    }
}

/// Fit of the domination constant on one batch, checked on another.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominationFit {
    pub c_v: f64,
    pub holdout_max_ratio: f64,
    pub violations: usize,
}

/// `c_V` = largest fit-batch ratio times `margin`; violations counted on the hold-out batch.
pub fn fit_domination(fit: &[GirsanovSample], holdout: &[GirsanovSample], h: f64, margin: f64) -> DominationFit {
    let c_v = fit.iter().map(|s| s.domination_ratio(h)).fold(0.0, f64::max) * margin;
    let ratios: Vec<f64> = holdout.iter().map(|s| s.domination_ratio(h)).collect();
    DominationFit {
        c_v,
        holdout_max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        violations: ratios.iter().filter(|&&r| r > c_v).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::ProcessLabel;
    use crate::sde::{FieldKind, FieldParams};
    use crate::stats::{ks_normal, mean_se};

    #[test]
    fn zero_integrand_gives_one() {
        let grid = TimeGrid::uniform(32, 1.0).unwrap();
        let w = wiener_path(&grid, 1, &StreamFamily::new(1), 0);
        let m = GirsanovIntegrand {
            times: grid.times().to_vec(),
            values: vec![0.0; 33],
        };
        let g = xi_compute(&m, &w, 1.0).unwrap();
        assert_eq!(g.xi, 1.0);
        assert!(xi_compute(&m, &w, 0.5).is_err());
    }

    #[test]
    fn constant_integrand_is_lognormal() {
        let grid = TimeGrid::uniform(16, 0.8).unwrap();
        let c = 0.9;
        let m = GirsanovIntegrand {
            times: grid.times().to_vec(),
            values: vec![c; 17],
        };
        let fam = StreamFamily::new(2);
        let logs: Vec<f64> = (0..4000)
            .map(|i| {
                let g = xi_compute(&m, &wiener_path(&grid, 1, &fam, i), 0.8).unwrap();
                g.xi.ln() + c * c * 0.8 / 2.0
            })
            .collect();
        assert!(ks_normal(&logs, c * c * 0.8).passes(0.01));
    }

    #[test]
    fn overflow_is_capped() {
        let grid = TimeGrid::uniform(2, 1.0).unwrap();
        let w = SamplePath::new(grid.clone(), 1, vec![0.0, 1e3, 2e3], ProcessLabel::Wiener).unwrap();
        let m = GirsanovIntegrand {
            times: grid.times().to_vec(),
            values: vec![1.0, 1.0, 0.0],
        };
        let g = xi_compute(&m, &w, 1.0).unwrap();
        assert!(g.capped && g.xi.is_finite());
    }

    #[test]
    fn holder_cases() {
        let grid = TimeGrid::uniform(50, 1.0).unwrap();
        let flat = SamplePath::new(grid.clone(), 1, vec![2.0; 51], ProcessLabel::Fbm).unwrap();
        assert_eq!(holder_seminorm(&flat, 0.5).unwrap(), 0.0);
        let lin = SamplePath::new(grid.clone(), 1, grid.times().to_vec(), ProcessLabel::Fbm).unwrap();
        assert!((holder_seminorm(&lin, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!(holder_seminorm(&lin, 1.0).is_err());
        // fBm path: seminorm of order below H settles under refinement.
        let fine = TimeGrid::uniform(1024, 1.0).unwrap();
        let b = crate::fbm::CholeskySampler::new(HurstIndex::new(0.75).unwrap(), &fine)
            .unwrap()
            .sample_one(1, &StreamFamily::new(5), 0);
        let vals: Vec<f64> = [256usize, 512, 1024]
            .iter()
            .map(|&n| holder_seminorm(&b.restrict(&TimeGrid::uniform(n, 1.0).unwrap()).unwrap(), 0.25).unwrap())
            .collect();
        assert!(vals.iter().all(|v| v.is_finite()));
        assert!((vals[2] - vals[1]).abs() <= (vals[1] - vals[0]).abs() + 0.05 * vals[2]);
    }

    #[test]
    fn girsanov_mean_and_domination() {
        let fields = VectorFieldSet::new(
            FieldKind::SinShift,
            1,
            FieldParams {
                base: 2.0,
                amp: 1.0,
                drift: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        let setup = GirsanovSetup::new(fields, 0.5, HurstIndex::new(0.7).unwrap(), 1.0, 64).unwrap();
        let fam = StreamFamily::new(9);
        let batch = setup.batch(&fam, 0, 2000).unwrap();
        let xi: Vec<f64> = batch.iter().map(|s| s.density.xi).collect();
        let (mean, se) = mean_se(&xi);
        assert!((mean - 1.0).abs() <= 3.0 * se, "{mean} ± {se}");
        assert!(batch.iter().all(|s| s.density.xi > 0.0 && !s.density.capped));
        let fit = fit_domination(&batch[..100], &batch[100..200], 0.7, 1.1);
        assert!(fit.c_v > 0.0 && fit.violations == 0, "{fit:?}");
    }
}
