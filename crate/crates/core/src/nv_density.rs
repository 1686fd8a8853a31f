//! Ornstein–Uhlenbeck coupling estimator of `g(F) = E[⟨DF, −DL^{-1}F⟩_ℋ | F]`
//! for the one-dimensional additive equation, and the density bounds it implies.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::fbm::{CholeskySampler, HurstIndex, SamplePath, TimeGrid};
use crate::hilbert::increment_gram;
use crate::quadrature::laguerre_rule;
use crate::rng::StreamFamily;
use crate::sde::{solve_additive_ode, DriftLogIntegral, SdeProblem, SolveMode};
use crate::stats::mean_se;

/// `e^{−θ}b + √(1−e^{−2θ}) b'`, pointwise.
pub fn ou_shift(b: &SamplePath, b_prime: &SamplePath, theta: f64) -> Result<SamplePath> {
    if b.grid() != b_prime.grid() || b.dim() != b_prime.dim() {
        return Err(LabError::GridMismatch("OU coupling needs paths on a common grid".into()));
    }
    if !(theta >= 0.0) {
        return Err(LabError::Domain(format!("θ must be nonnegative, got {theta}")));
    }
    let c = (-theta).exp();
    let s = (-(-2.0 * theta).exp_m1()).sqrt();
    let vals = b.raw().iter().zip(b_prime.raw()).map(|(x, y)| c * x + s * y).collect();
    SamplePath::new(b.grid().clone(), b.dim(), vals, b.label())
}

/// Numerical settings of [`g_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GEstimateConfig {
    /// Uniform simulation cells on `[0, t]`.
    pub cells: usize,
    /// Gauss–Laguerre order of the θ-integral.
    pub theta_nodes: usize,
    pub bins: usize,
    /// Bins with fewer samples raise a warning.
    pub min_per_bin: usize,
}

impl Default for GEstimateConfig {
    fn default() -> Self {
        Self {
            cells: 64,
            theta_nodes: 16,
            bins: 20,
            min_per_bin: 30,
        }
    }
}

/// Bin means of the coupling integrand conditioned on `F = X_t − m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GEstimate {
    pub bin_centers: Vec<f64>,
    pub g_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub n_samples: Vec<usize>,
    pub theta_nodes: usize,
    /// `m = E[X_t]`, from an independent batch.
    pub mean: f64,
    /// `σ²t^{2H}`, the value for a vanishing drift.
    pub reference: f64,
    pub warnings: Vec<String>,
}

impl GEstimate {
    /// Bins whose estimate falls outside `[lo, hi]`.
    pub fn violations(&self, lo: f64, hi: f64) -> usize {
        self.g_hat.iter().filter(|&&g| g < lo || g > hi).count()
    }

    /// Largest `|ĝ − reference|` in units of `max(SE, floor)`.
    pub fn max_standardized_deviation(&self, floor: f64) -> f64 {
        self.g_hat
            .iter()
            .zip(&self.se)
            .map(|(g, s)| (g - self.reference).abs() / s.max(floor))
            .fold(0.0, f64::max)
    }

    /// CSV with columns `bin_center, g_hat, se, n_samples`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_center", "g_hat", "se", "n_samples"])?;
        for k in 0..self.g_hat.len() {
            w.write_record([
                self.bin_centers[k].to_string(),
                self.g_hat[k].to_string(),
                self.se[k].to_string(),
                self.n_samples[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulation of the additive equation on a uniform grid of `[0, t]`.
struct AdditiveSim<'a> {
    problem: &'a SdeProblem,
    sampler: CholeskySampler,
    sigma: f64,
}

impl<'a> AdditiveSim<'a> {
    fn new(problem: &'a SdeProblem, t: f64, cells: usize) -> Result<Self> {
        if problem.mode != SolveMode::Additive1d {
            return Err(LabError::Config("g estimation needs an additive-1d problem".into()));
        }
        let grid = TimeGrid::uniform(cells, t)?;
        Ok(Self {
            problem,
            sampler: CholeskySampler::new(problem.h, &grid)?,
            sigma: problem.fields.params().sigma,
        })
    }

    fn solve(&self, b: &SamplePath) -> Result<SamplePath> {
        let f = &self.problem.fields;
        solve_additive_ode(self.problem.a[0], |x| f.v0(x), self.sigma, b)
    }

    /// Cell averages of the node profile `r ↦ D_rX_t`.
    fn derivative_steps(&self, x: &SamplePath) -> Result<DVector<f64>> {
        let f = &self.problem.fields;
        let p = DriftLogIntegral::new(x, |y| f.v0_prime(y)).profile(x.grid().terminal(), self.sigma)?;
        Ok(DVector::from_iterator(p.len() - 1, p.windows(2).map(|w| 0.5 * (w[0] + w[1]))))
    }
}

/// `m = E[X_t]` and `E|X_t − m|`, both from one batch of `n` paths.
pub fn additive_moments(problem: &SdeProblem, t: f64, n: usize, cells: usize, family: &StreamFamily) -> Result<(f64, f64)> {
    let sim = AdditiveSim::new(problem, t, cells)?;
    let xt = (0..n as u64)
        .into_par_iter()
        .map(|i| Ok(sim.solve(&sim.sampler.sample_one(1, family, i))?.terminal()[0]))
        .collect::<Result<Vec<f64>>>()?;
    let (m, _) = mean_se(&xt);
    let abs: Vec<f64> = xt.iter().map(|x| (x - m).abs()).collect();
    Ok((m, mean_se(&abs).0))
}

/// Monte Carlo estimate of `g(z) = E[∫_0^∞ e^{−θ}⟨DX_t, DX_t^θ⟩_ℋ dθ | X_t − m = z]`,
/// where `X^θ` is driven by [`ou_shift`] of `B` with an independent `B'`. The
/// derivative profiles are step functions on the simulation grid, whose `ℋ`
/// products are exact through the increment Gram matrix for every `H`.
pub fn g_estimate(problem: &SdeProblem, t: f64, n_outer: usize, cfg: &GEstimateConfig, family: &StreamFamily) -> Result<GEstimate> {
    if n_outer < cfg.bins.max(1) || cfg.bins == 0 {
        return Err(LabError::Domain(format!("{n_outer} samples cannot fill {} bins", cfg.bins)));
    }
    let sim = AdditiveSim::new(problem, t, cfg.cells)?;
    let q: DMatrix<f64> = increment_gram(sim.sampler.grid(), problem.h)?.matrix().clone();
    let rule = laguerre_rule(cfg.theta_nodes);
    let (fam_b, fam_bp) = (family.fork(1), family.fork(2));
    let (mean, _) = additive_moments(problem, t, n_outer, cfg.cells, &family.fork(3))?;
    let mut pairs = (0..n_outer as u64)
        .into_par_iter()
        .map(|i| {
            let b = sim.sampler.sample_one(1, &fam_b, i);
            let bp = sim.sampler.sample_one(1, &fam_bp, i);
            let x = sim.solve(&b)?;
            let qphi = &q * sim.derivative_steps(&x)?;
            let mut acc = 0.0;
            for &(theta, w) in &rule {
                let xs = sim.solve(&ou_shift(&b, &bp, theta)?)?;
                acc += w * qphi.dot(&sim.derivative_steps(&xs)?);
            }
            Ok((x.terminal()[0] - mean, acc))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut est = GEstimate {
        bin_centers: Vec::new(),
        g_hat: Vec::new(),
        se: Vec::new(),
        n_samples: Vec::new(),
        theta_nodes: rule.len(),
        mean,
        reference: sim.sigma * sim.sigma * t.powf(problem.h.two_h()),
        warnings: Vec::new(),
    };
    for k in 0..cfg.bins {
        let (lo, hi) = (k * n_outer / cfg.bins, (k + 1) * n_outer / cfg.bins);
        let zs: Vec<f64> = pairs[lo..hi].iter().map(|p| p.0).collect();
        let gs: Vec<f64> = pairs[lo..hi].iter().map(|p| p.1).collect();
        let (g, se) = mean_se(&gs);
        if gs.len() < cfg.min_per_bin {
            est.warnings.push(format!("bin {k} has only {} samples", gs.len()));
        }
        est.bin_centers.push(mean_se(&zs).0);
        est.g_hat.push(g);
        est.se.push(if se.is_finite() { se } else { 0.0 });
        est.n_samples.push(gs.len());
    }
    Ok(est)
}

/// Two-sided density curves of a centered `F` with `c1 ≤ g(F) ≤ c2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityBounds {
    pub z: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DensityBounds {
    /// CSV with columns `z, lower, upper, kde`.
    pub fn write_csv<W: Write>(&self, kde: &[f64], out: W) -> Result<()> {
        if kde.len() != self.z.len() {
            return Err(LabError::GridMismatch("KDE and bound grids differ".into()));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["z", "lower", "upper", "kde"])?;
        for k in 0..self.z.len() {
            w.write_record([self.z[k], self.lower[k], self.upper[k], kde[k]].map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `lower(z) = E|F|/(2c_2) e^{−z²/(2c_1)}`, `upper(z) = E|F|/(2c_1) e^{−z²/(2c_2)}`.
pub fn density_bounds_from_g(c1: f64, c2: f64, e_abs_f: f64, z_grid: &[f64]) -> Result<DensityBounds> {
    if !(c1 > 0.0) || !(e_abs_f > 0.0) {
        return Err(LabError::Domain(format!("need c1 > 0 and E|F| > 0, got {c1}, {e_abs_f}")));
    }
    if c1 > c2 {
        return Err(LabError::Ordering(format!("need c1 <= c2, got {c1} > {c2}")));
    }
    Ok(DensityBounds {
        z: z_grid.to_vec(),
        lower: z_grid.iter().map(|z| e_abs_f / (2.0 * c2) * (-z * z / (2.0 * c1)).exp()).collect(),
        upper: z_grid.iter().map(|z| e_abs_f / (2.0 * c1) * (-z * z / (2.0 * c2)).exp()).collect(),
    })
}

/// `e^{∓2M}σ²t^{2H}`, the bracket on `g` for `‖V_0'‖ ≤ M`.
pub fn g_bracket(sigma: f64, t: f64, h: HurstIndex, m_bound: f64) -> (f64, f64) {
    let r = sigma * sigma * t.powf(h.two_h());
    (r * (-2.0 * m_bound).exp(), r * (2.0 * m_bound).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::ProcessLabel;
    use crate::hilbert::{inner_rough, inner_smooth, StepFunction};
    use crate::sde::{FieldKind, FieldParams, VectorFieldSet};
    use crate::stats::ks_normal;

    fn hh(v: f64) -> HurstIndex {
        HurstIndex::new(v).unwrap()
    }

    fn arctan_problem(h: f64, drift: f64) -> SdeProblem {
        let f = VectorFieldSet::new(
            FieldKind::Arctan,
            1,
            FieldParams {
                sigma: 1.0,
                drift,
                ..Default::default()
            },
        )
        .unwrap();
        SdeProblem::new(vec![0.3], f, hh(h), SolveMode::Additive1d).unwrap()
    }

    #[test]
    fn ou_shift_limits_and_law() {
        let grid = TimeGrid::uniform(32, 1.0).unwrap();
        let s = CholeskySampler::new(hh(0.75), &grid).unwrap();
        let fam = StreamFamily::new(3);
        let b = s.sample_one(1, &fam.fork(1), 0);
        let bp = s.sample_one(1, &fam.fork(2), 0);
        assert_eq!(ou_shift(&b, &bp, 0.0).unwrap().raw(), b.raw());
        let far = ou_shift(&b, &bp, 50.0).unwrap();
        assert!(far.raw().iter().zip(bp.raw()).all(|(x, y)| (x - y).abs() < 1e-15));
        assert!(ou_shift(
            &b,
            &SamplePath::zeros(TimeGrid::uniform(8, 1.0).unwrap(), 1, ProcessLabel::Fbm),
            1.0
        )
        .is_err());
        for theta in [0.1, 1.0, 10.0] {
            let xs: Vec<f64> = (0..2000)
                .map(|i| {
                    let b = s.sample_one(1, &fam.fork(1), i);
                    let bp = s.sample_one(1, &fam.fork(2), i);
                    ou_shift(&b, &bp, theta).unwrap().terminal()[0]
                })
                .collect();
            assert!(ks_normal(&xs, 1.0).passes(0.01), "θ = {theta}");
        }
    }

    #[test]
    fn gram_products_match_inner_products() {
        let grid = TimeGrid::uniform(16, 0.5).unwrap();
        let phi: Vec<f64> = (0..16).map(|k| 1.0 + 0.1 * k as f64).collect();
        let psi: Vec<f64> = (0..16).map(|k| 2.0 - 0.05 * k as f64).collect();
        let sf = |v: &[f64]| StepFunction::scalar(grid.times().to_vec(), v.to_vec()).unwrap();
        for h in [0.3, 0.75] {
            let q = increment_gram(&grid, hh(h)).unwrap().matrix().clone();
            let via_q = (&q * DVector::from_vec(phi.clone())).dot(&DVector::from_vec(psi.clone()));
            let direct = if h > 0.5 {
                inner_smooth(&sf(&phi), &sf(&psi), hh(h)).unwrap()
            } else {
                inner_rough(&sf(&phi), &sf(&psi), hh(h), 2).unwrap().value
            };
            assert!((via_q - direct).abs() < 1e-10 * direct.abs(), "H = {h}: {via_q} vs {direct}");
        }
    }

    #[test]
    fn vanishing_drift_collapses() {
        let cfg = GEstimateConfig {
            cells: 16,
            bins: 5,
            ..Default::default()
        };
        for h in [0.3, 0.75] {
            let g = g_estimate(&arctan_problem(h, 0.0), 0.5, 200, &cfg, &StreamFamily::new(5)).unwrap();
            assert!(g.max_standardized_deviation(1e-12 * g.reference) <= 3.0);
            assert!(g.warnings.len() == 0 && g.n_samples.iter().sum::<usize>() == 200);
        }
    }

    #[test]
    fn bounded_drift_sandwich_and_theta_order() {
        let cfg = GEstimateConfig {
            cells: 32,
            bins: 5,
            ..Default::default()
        };
        let fam = StreamFamily::new(6);
        for h in [0.3, 0.75] {
            let p = arctan_problem(h, 1.0);
            let g = g_estimate(&p, 0.5, 400, &cfg, &fam).unwrap();
            let (lo, hi) = g_bracket(1.0, 0.5, hh(h), 1.0);
            assert_eq!(g.violations(0.9 * lo, 1.1 * hi), 0, "H = {h}: {:?}", g.g_hat);
            assert!(g.g_hat.iter().all(|&v| v > 0.0));
            let g24 = g_estimate(&p, 0.5, 400, &GEstimateConfig { theta_nodes: 24, ..cfg }, &fam).unwrap();
            for k in 0..5 {
                assert!((g.g_hat[k] - g24.g_hat[k]).abs() < g.se[k], "bin {k}");
            }
        }
        let mut buf = Vec::new();
        g_estimate(
            &arctan_problem(0.75, 1.0),
            0.5,
            40,
            &GEstimateConfig {
                cells: 8,
                bins: 2,
                ..Default::default()
            },
            &fam,
        )
        .unwrap()
        .write_csv(&mut buf)
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn few_samples_warn_and_wrong_mode_fails() {
        let cfg = GEstimateConfig {
            cells: 8,
            bins: 4,
            min_per_bin: 30,
            ..Default::default()
        };
        let g = g_estimate(&arctan_problem(0.75, 1.0), 0.5, 40, &cfg, &StreamFamily::new(1)).unwrap();
        assert_eq!(g.warnings.len(), 4);
        let f = VectorFieldSet::new(FieldKind::SinShift, 1, FieldParams::default()).unwrap();
        let p = SdeProblem::new(vec![0.0], f, hh(0.7), SolveMode::Multiplicative1d).unwrap();
        assert!(g_estimate(&p, 0.5, 40, &cfg, &StreamFamily::new(1)).is_err());
    }

    #[test]
    fn density_bounds() {
        let (s2, e) = (0.5f64, (0.5f64 * 2.0 / std::f64::consts::PI).sqrt());
        let z: Vec<f64> = (-20..=20).map(|k| k as f64 * 0.1).collect();
        let b = density_bounds_from_g(s2, s2, e, &z).unwrap();
        for (k, &zz) in z.iter().enumerate() {
            let exact = (-zz * zz / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt();
            assert!((b.lower[k] - exact).abs() < 1e-14 && b.lower[k] == b.upper[k]);
        }
        let b = density_bounds_from_g(0.3, 0.8, 0.5, &z).unwrap();
        assert!(b.lower.iter().zip(&b.upper).all(|(l, u)| l <= u));
        assert!(matches!(density_bounds_from_g(0.8, 0.3, 0.5, &z), Err(LabError::Ordering(_))));
        let mut buf = Vec::new();
        b.write_csv(&vec![0.0; z.len()], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("z,lower,upper,kde\n"));
    }
}
