use std::io::Write;

use serde::{Deserialize, Serialize};

use super::KdeEstimate;
use crate::error::{LabError, Result};
use crate::fbm::HurstIndex;

/// `count` values spaced evenly in `log` between `min` and `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl LogGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.min > 0.0 && self.max >= self.min) || self.count == 0 {
            return Err(LabError::Config(format!("bad log grid {self:?}")));
        }
        if self.count == 1 {
            return Ok(vec![self.min]);
        }
        let (a, b) = (self.min.ln(), self.max.ln());
        Ok((0..self.count)
            .map(|k| (a + (b - a) * k as f64 / (self.count - 1) as f64).exp())
            .collect())
    }
}

/// The Gaussian shape `c_1 t^{−mH} exp(−c_2|x−a|²/t^{2H})` and its test region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianShape {
    pub t: f64,
    pub h: f64,
    /// Region radius in units of `t^H`.
    pub radius_factor: f64,
}

impl GaussianShape {
    pub fn new(t: f64, h: HurstIndex, radius_factor: f64) -> Result<Self> {
        if !(t > 0.0 && radius_factor > 0.0) {
            return Err(LabError::Domain(format!(
                "need t > 0 and a positive radius, got {t}, {radius_factor}"
            )));
        }
        Ok(Self {
            t,
            h: h.value(),
            radius_factor,
        })
    }

    fn scale(&self) -> f64 {
        self.t.powf(self.h)
    }

    /// Grid points of the region with `|x−a|²/t^{2H}`.
    fn region(&self, kde: &KdeEstimate, a: &[f64]) -> Vec<(usize, f64)> {
        let s2 = self.scale() * self.scale();
        (0..kde.values.len())
            .filter_map(|k| {
                let r2 = kde.grid.point(k).iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / s2;
                (r2 <= self.radius_factor * self.radius_factor * (1.0 + 1e-12)).then_some((k, r2))
            })
            .collect()
    }

    pub fn eval(&self, c1: f64, c2: f64, m: usize, r2: f64) -> f64 {
        c1 * self.scale().powi(-(m as i32)) * (-c2 * r2).exp()
    }
}

/// The fitted `c_1` for every `c_2` of the log grid, and the pair with the
/// largest mass on the region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundFit {
    pub c2: Vec<f64>,
    pub c1: Vec<f64>,
    pub best_c1: f64,
    pub best_c2: f64,
    pub region_points: usize,
    pub pass: bool,
}

impl BoundFit {
    /// CSV with columns `c2, c1`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["c2", "c1"])?;
        for (c2, c1) in self.c2.iter().zip(&self.c1) {
            w.write_record([c2.to_string(), c1.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pointwise comparison of a curve with the KDE bands on a region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub points: usize,
    pub violations: usize,
    /// Smallest ratio band/curve (lower bounds) or curve/band (upper bounds).
    pub min_ratio: f64,
}

impl BoundCheck {
    pub fn violation_fraction(&self) -> f64 {
        self.violations as f64 / self.points.max(1) as f64
    }
}

fn region_mass(shape: &GaussianShape, region: &[(usize, f64)], c1: f64, c2: f64, m: usize) -> f64 {
    region.iter().map(|&(_, r2)| shape.eval(c1, c2, m, r2)).sum()
}

/// Largest `c_1` with `c_1 t^{−mH}e^{−c_2|x−a|²/t^{2H}} ≤` KDE lower band on the region, per `c_2`.
pub fn fit_lower_bound(kde: &KdeEstimate, a: &[f64], shape: &GaussianShape, c2_grid: &[f64]) -> Result<BoundFit> {
    fit(kde, a, shape, c2_grid, true)
}

/// Smallest `c_1` with the Gaussian curve `≥` KDE upper band on the region, per `c_2`.
pub fn fit_upper_bound(kde: &KdeEstimate, a: &[f64], shape: &GaussianShape, c2_grid: &[f64]) -> Result<BoundFit> {
    fit(kde, a, shape, c2_grid, false)
}

fn fit(kde: &KdeEstimate, a: &[f64], shape: &GaussianShape, c2_grid: &[f64], lower: bool) -> Result<BoundFit> {
    let m = kde.grid.dim();
    if a.len() != m {
        return Err(LabError::GridMismatch("a and the density grid differ in dimension".into()));
    }
    let region = shape.region(kde, a);
    if region.is_empty() || c2_grid.is_empty() {
        return Err(LabError::Domain("empty test region or c2 grid".into()));
    }
    let norm = shape.scale().powi(m as i32);
    let c1: Vec<f64> = c2_grid
        .iter()
        .map(|&c2| {
            let ratios = region.iter().map(|&(k, r2)| {
                let band = if lower { kde.lower[k] } else { kde.upper[k] };
                band.max(0.0) * norm * (c2 * r2).exp()
            });
            if lower {
                ratios.fold(f64::INFINITY, f64::min)
            } else {
                ratios.fold(0.0, f64::max)
            }
        })
        .collect();
    let masses: Vec<f64> = c2_grid
        .iter()
        .zip(&c1)
        .map(|(&c2, &c1)| region_mass(shape, &region, c1, c2, m))
        .collect();
    let pick = (0..c1.len())
        .reduce(|i, j| {
            let better = if lower { masses[j] > masses[i] } else { masses[j] < masses[i] };
            if better {
                j
            } else {
                i
            }
        })
        .unwrap();
    Ok(BoundFit {
        pass: if lower { c1[pick] > 0.0 } else { c1[pick].is_finite() },
        c2: c2_grid.to_vec(),
        best_c1: c1[pick],
        best_c2: c2_grid[pick],
        region_points: region.len(),
        c1,
    })
}

/// Counts region points where the lower curve exceeds the KDE lower band.
pub fn check_lower_bound(kde: &KdeEstimate, a: &[f64], shape: &GaussianShape, c1: f64, c2: f64) -> BoundCheck {
    let m = kde.grid.dim();
    let region = shape.region(kde, a);
    let mut check = BoundCheck {
        points: region.len(),
        violations: 0,
        min_ratio: f64::INFINITY,
    };
    for (k, r2) in region {
        let curve = shape.eval(c1, c2, m, r2);
        check.violations += (curve > kde.lower[k]) as usize;
        check.min_ratio = check.min_ratio.min(kde.lower[k] / curve);
    }
    check
}

/// Counts region points where the upper curve falls below the KDE upper band.
pub fn check_upper_bound(kde: &KdeEstimate, a: &[f64], shape: &GaussianShape, c1: f64, c2: f64) -> BoundCheck {
    let m = kde.grid.dim();
    let region = shape.region(kde, a);
    let mut check = BoundCheck {
        points: region.len(),
        violations: 0,
        min_ratio: f64::INFINITY,
    };
    for (k, r2) in region {
        let curve = shape.eval(c1, c2, m, r2);
        check.violations += (curve < kde.upper[k]) as usize;
        check.min_ratio = check.min_ratio.min(curve / kde.upper[k].max(f64::MIN_POSITIVE));
    }
    check
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::{kde_estimate, DensityGrid, KdeConfig};
    use crate::rng::{fill_normal, StreamFamily};

    fn gaussian_kde(sigma: f64, n: usize) -> KdeEstimate {
        let mut rng = StreamFamily::new(11).stream(0);
        let samples: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut x = [0.0];
                fill_normal(&mut rng, &mut x);
                vec![sigma * x[0]]
            })
            .collect();
        let grid = DensityGrid::centered(&[0.0], 4.0 * sigma, 161).unwrap();
        kde_estimate(&samples, &grid, &KdeConfig::default(), &StreamFamily::new(12)).unwrap()
    }

    #[test]
    fn exact_gaussian_frontier() {
        let sigma = 0.8;
        let kde = gaussian_kde(sigma, 20_000);
        let h = HurstIndex::new(0.75).unwrap();
        let shape = GaussianShape::new(1.0, h, 2.0 * sigma).unwrap();
        let target = 1.0 / (2.0 * sigma * sigma);
        let grid = LogGrid {
            min: 0.1,
            max: 10.0,
            count: 41,
        }
        .values()
        .unwrap();
        let fit = fit_lower_bound(&kde, &[0.0], &shape, &grid).unwrap();
        assert!(fit.pass);
        let k = grid.iter().position(|&c| c >= target).unwrap();
        let normalizer = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma).sqrt();
        assert!(fit.c1[k] > 0.8 * normalizer, "{}", fit.c1[k]);
        assert!(fit.c1[k] < normalizer * 1.05);
        let check = check_lower_bound(&kde, &[0.0], &shape, fit.best_c1, fit.best_c2);
        assert_eq!(check.violations, 0);
        let up = fit_upper_bound(&kde, &[0.0], &shape, &grid).unwrap();
        assert_eq!(check_upper_bound(&kde, &[0.0], &shape, up.best_c1, up.best_c2).violations, 0);
    }

    #[test]
    fn enlarging_the_region_shrinks_c1() {
        let kde = gaussian_kde(1.0, 5000);
        let h = HurstIndex::new(0.75).unwrap();
        let grid = LogGrid {
            min: 0.1,
            max: 5.0,
            count: 12,
        }
        .values()
        .unwrap();
        let mut prev = vec![f64::INFINITY; grid.len()];
        for r in [0.5, 1.0, 2.0, 3.0] {
            let fit = fit_lower_bound(&kde, &[0.0], &GaussianShape::new(1.0, h, r).unwrap(), &grid).unwrap();
            assert!(fit.c1.iter().zip(&prev).all(|(c, p)| c <= p));
            prev = fit.c1;
        }
    }

    #[test]
    fn log_grid_and_csv() {
        let v = LogGrid {
            min: 0.1,
            max: 10.0,
            count: 3,
        }
        .values()
        .unwrap();
        assert!((v[1] - 1.0).abs() < 1e-14 && (v[2] - 10.0).abs() < 1e-13);
        assert!(LogGrid {
            min: 0.0,
            max: 1.0,
            count: 3
        }
        .values()
        .is_err());
        let kde = gaussian_kde(1.0, 1000);
        let fit = fit_lower_bound(
            &kde,
            &[0.0],
            &GaussianShape::new(1.0, HurstIndex::new(0.75).unwrap(), 1.0).unwrap(),
            &v,
        )
        .unwrap();
        let mut buf = Vec::new();
        fit.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
