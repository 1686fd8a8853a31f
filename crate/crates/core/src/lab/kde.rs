use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::rng::StreamFamily;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::stats::{mean_se, variance};

/// Fewest samples a density estimate is attempted on.
pub const MIN_KDE_SAMPLES: usize = 100;

/// Kernel support in bandwidths; the discrete kernel is renormalized after truncation.
const KERNEL_REACH: f64 = 4.0;

/// Equally spaced points `min + i·step`, `i < n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Axis {
    pub min: f64,
    pub step: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        if n < 2 || !(max > min) {
            return Err(LabError::Domain(format!(
                "axis needs n >= 2 and min < max, got [{min}, {max}] with {n}"
            )));
        }
        Ok(Self {
            min,
            step: (max - min) / (n - 1) as f64,
            n,
        })
    }

    pub fn value(&self, i: usize) -> f64 {
        self.min + i as f64 * self.step
    }
}

/// Product grid; flat index is row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityGrid {
    axes: Vec<Axis>,
}

impl DensityGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(LabError::Domain("density grid needs at least one axis".into()));
        }
        Ok(Self { axes })
    }

    /// `points` per axis on the cube `center ± half_width`.
    pub fn centered(center: &[f64], half_width: f64, points: usize) -> Result<Self> {
        Self::new(
            center
                .iter()
                .map(|&c| Axis::new(c - half_width, c + half_width, points))
                .collect::<Result<_>>()?,
        )
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.step).product()
    }

    pub fn point(&self, k: usize) -> Vec<f64> {
        let mut rest = k;
        let mut x = vec![0.0; self.dim()];
        for (c, a) in self.axes.iter().enumerate().rev() {
            x[c] = a.value(rest % a.n);
            rest /= a.n;
        }
        x
    }
}

/// Bandwidth and bootstrap settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KdeConfig {
    /// Per-coordinate bandwidth; Silverman's rule when absent.
    pub bandwidth: Option<Vec<f64>>,
    pub resamples: usize,
    /// Pointwise coverage of the bootstrap band.
    pub level: f64,
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            resamples: 200,
            level: 0.99,
        }
    }
}

/// Density values and pointwise bands `f̃ ± z·sd*` on a grid, where `sd*` is
/// the bootstrap spread of the bias-corrected estimate `f̃ = 2f̂_h − f̂_{√2h}`,
/// whose leading
/// smoothing bias cancels; a band around `f̂_h` alone under-covers by the
/// `h²f''/2` bias.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KdeEstimate {
    pub grid: DensityGrid,
    pub bandwidth: Vec<f64>,
    pub values: Vec<f64>,
    /// `2f̂_h − f̂_{√2h}`.
    pub corrected: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n_samples: usize,
}

impl KdeEstimate {
    /// Riemann sum of the estimate over the grid.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn mean_band_width(&self) -> f64 {
        let w: Vec<f64> = self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect();
        mean_se(&w).0
    }

    /// CSV with columns `x_0, …, x_{m-1}, kde, corrected, lower, upper`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.grid.dim()).map(|c| format!("x_{c}")).collect();
        header.extend(["kde", "corrected", "lower", "upper"].map(String::from));
        w.write_record(&header)?;
        for k in 0..self.values.len() {
            let mut row: Vec<String> = self.grid.point(k).iter().map(|v| v.to_string()).collect();
            row.extend([self.values[k], self.corrected[k], self.lower[k], self.upper[k]].map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Normal-reference rule `h_c = s_c (4/((m+2)n))^{1/(m+4)}` per coordinate.
pub fn silverman_bandwidth(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = samples.first().map_or(0, Vec::len);
    let n = samples.len() as f64;
    let factor = (4.0 / ((m as f64 + 2.0) * n)).powf(1.0 / (m as f64 + 4.0));
    (0..m)
        .map(|c| {
            let col: Vec<f64> = samples.iter().map(|x| x[c]).collect();
            let s = variance(&col).sqrt();
            if !(s > 0.0 && s.is_finite()) {
                return Err(LabError::Bandwidth(format!("coordinate {c} has zero spread")));
            }
            Ok(s * factor)
        })
        .collect()
}

/// Samples linearly binned on the grid extended by the kernel reach.
struct Binning {
    dims: Vec<usize>,
    strides: Vec<usize>,
    pad: Vec<usize>,
    /// Base cell and fractional offsets of each sample inside the extended grid.
    cells: Vec<Option<(usize, Vec<f64>)>>,
}

impl Binning {
    fn new(samples: &[Vec<f64>], grid: &DensityGrid, h: &[f64]) -> Self {
        let h: Vec<f64> = h.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
        let pad: Vec<usize> = grid
            .axes
            .iter()
            .zip(&h)
            .map(|(a, h)| (KERNEL_REACH * h / a.step).ceil() as usize)
            .collect();
        let dims: Vec<usize> = grid.axes.iter().zip(&pad).map(|(a, p)| a.n + 2 * p).collect();
        let mut strides = vec![1; dims.len()];
        for c in (0..dims.len().saturating_sub(1)).rev() {
            strides[c] = strides[c + 1] * dims[c + 1];
        }
        let cells = samples
            .iter()
            .map(|x| {
                let mut base = 0;
                let mut frac = Vec::with_capacity(x.len());
                for (c, a) in grid.axes.iter().enumerate() {
                    let u = (x[c] - a.min) / a.step + pad[c] as f64;
                    if !(u >= 0.0 && u < (dims[c] - 1) as f64) {
                        return None;
                    }
                    let i = u.floor();
                    base += i as usize * strides[c];
                    frac.push(u - i);
                }
                Some((base, frac))
            })
            .collect();
        Self { dims, strides, pad, cells }
    }

    fn deposit(&self, mass: &mut [f64], sample: usize) {
        let Some((base, frac)) = &self.cells[sample] else { return };
        for mask in 0..1usize << frac.len() {
            let mut idx = *base;
            let mut w = 1.0;
            for (c, f) in frac.iter().enumerate() {
                if mask >> c & 1 == 1 {
                    idx += self.strides[c];
                    w *= f;
                } else {
                    w *= 1.0 - f;
                }
            }
            mass[idx] += w;
        }
    }

    fn empty(&self) -> Vec<f64> {
        vec![0.0; self.dims.iter().product()]
    }
}

/// Separable convolution with the truncated discrete Gaussian kernels, then
/// the interior (the evaluation grid) scaled to a density.
fn smooth(mass: &[f64], bin: &Binning, grid: &DensityGrid, h: &[f64], n: usize) -> Vec<f64> {
    let mut cur = mass.to_vec();
    for (c, a) in grid.axes.iter().enumerate() {
        let p = bin.pad[c] as isize;
        let mut w: Vec<f64> = (-p..=p).map(|j| (-0.5 * (j as f64 * a.step / h[c]).powi(2)).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        let (len, stride) = (bin.dims[c] as isize, bin.strides[c]);
        let mut next = vec![0.0; cur.len()];
        for (idx, out) in next.iter_mut().enumerate() {
            let i = (idx / stride) as isize % len;
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let j = i + k as isize - p;
                if (0..len).contains(&j) {
                    acc += wk * cur[(idx as isize + (j - i) * stride as isize) as usize];
                }
            }
            *out = acc;
        }
        cur = next;
    }
    let scale = 1.0 / (n as f64 * grid.cell_volume());
    (0..grid.len())
        .map(|k| {
            let mut rest = k;
            let mut idx = 0;
            for c in (0..grid.dim()).rev() {
                let i = rest % grid.axes[c].n;
                rest /= grid.axes[c].n;
                idx += (i + bin.pad[c]) * bin.strides[c];
            }
            cur[idx] * scale
        })
        .collect()
}

/// `(f̂_h, 2f̂_h − f̂_{√2h})` from one binned mass.
fn smooth_pair(mass: &[f64], bin: &Binning, grid: &DensityGrid, h: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let wide: Vec<f64> = h.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
    let f = smooth(mass, bin, grid, h, n);
    let g = smooth(mass, bin, grid, &wide, n);
    let corrected = f.iter().zip(&g).map(|(a, b)| 2.0 * a - b).collect();
    (f, corrected)
}

/// Product-Gaussian KDE by linear binning, with percentile bands from
/// `cfg.resamples` bootstrap resamples of the samples (one per path).
pub fn kde_estimate(samples: &[Vec<f64>], grid: &DensityGrid, cfg: &KdeConfig, family: &StreamFamily) -> Result<KdeEstimate> {
    if samples.len() < MIN_KDE_SAMPLES {
        return Err(LabError::Domain(format!(
            "{} samples, need at least {MIN_KDE_SAMPLES}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| x.len() != grid.dim()) {
        return Err(LabError::GridMismatch("sample and grid dimensions differ".into()));
    }
    let h = match &cfg.bandwidth {
        Some(h) if h.len() != grid.dim() || h.iter().any(|v| !(*v > 0.0)) => {
            return Err(LabError::Bandwidth(format!("bandwidth {h:?} must be positive per coordinate")))
        }
        Some(h) => h.clone(),
        None => silverman_bandwidth(samples)?,
    };
    let n = samples.len();
    let bin = Binning::new(samples, grid, &h);
    let mut mass = bin.empty();
    (0..n).for_each(|s| bin.deposit(&mut mass, s));
    let (values, corrected) = smooth_pair(&mass, &bin, grid, &h, n);
    let boot: Vec<Vec<f64>> = (0..cfg.resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = family.stream(r);
            let mut mass = bin.empty();
            for _ in 0..n {
                bin.deposit(&mut mass, rng.gen_range(0..n));
            }
            smooth_pair(&mass, &bin, grid, &h, n).1
        })
        .collect();
    let z = Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(0.5 * (1.0 + cfg.level));
    let (mut lower, mut upper) = (Vec::with_capacity(values.len()), Vec::with_capacity(values.len()));
    let mut col = vec![0.0; boot.len()];
    for k in 0..values.len() {
        col.iter_mut().zip(&boot).for_each(|(v, b)| *v = b[k]);
        let sd = if col.len() > 1 { variance(&col).sqrt() } else { 0.0 };
        lower.push(corrected[k] - z * sd);
        upper.push(corrected[k] + z * sd);
    }
    Ok(KdeEstimate {
        grid: grid.clone(),
        bandwidth: h,
        values,
        corrected,
        lower,
        upper,
        n_samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::fill_normal;

    fn normals(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = StreamFamily::new(seed).stream(0);
        (0..n)
            .map(|_| {
                let mut x = vec![0.0; m];
                fill_normal(&mut rng, &mut x);
                x
            })
            .collect()
    }

    fn phi(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn gaussian_samples_are_covered() {
        let grid = DensityGrid::new(vec![Axis::new(-2.0, 2.0, 81).unwrap()]).unwrap();
        let fractions: Vec<f64> = (0..20)
            .map(|r| {
                let k = kde_estimate(&normals(10_000, 1, 100 + r), &grid, &KdeConfig::default(), &StreamFamily::new(r)).unwrap();
                assert!(k.lower.iter().zip(&k.upper).all(|(l, u)| l <= u));
                let inside = (0..grid.len())
                    .filter(|&i| {
                        let p = phi(grid.point(i)[0]);
                        k.lower[i] <= p && p <= k.upper[i]
                    })
                    .count();
                inside as f64 / grid.len() as f64
            })
            .collect();
        assert!(mean_se(&fractions).0 >= 0.95, "{fractions:?}");
        assert!(fractions.iter().filter(|&&f| f >= 0.95).count() >= 18, "{fractions:?}");
    }

    #[test]
    fn normalization() {
        let grid = DensityGrid::centered(&[0.0], 6.0, 241).unwrap();
        let k = kde_estimate(
            &normals(2000, 1, 3),
            &grid,
            &KdeConfig {
                resamples: 0,
                ..Default::default()
            },
            &StreamFamily::new(0),
        )
        .unwrap();
        assert!((0.98..=1.0 + 1e-12).contains(&k.integral()), "{}", k.integral());
        let grid = DensityGrid::centered(&[0.0, 0.0], 6.0, 61).unwrap();
        let k = kde_estimate(
            &normals(2000, 2, 4),
            &grid,
            &KdeConfig {
                resamples: 0,
                ..Default::default()
            },
            &StreamFamily::new(0),
        )
        .unwrap();
        assert!((0.98..=1.0 + 1e-12).contains(&k.integral()), "{}", k.integral());
        let p = 1.0 / (2.0 * std::f64::consts::PI * (1.0 + k.bandwidth[0] * k.bandwidth[1]));
        let centre = k.values[grid.len() / 2];
        assert!((centre - p).abs() < 0.1 * p, "{centre} vs {p}");
        assert!((k.corrected[grid.len() / 2] - phi(0.0) * phi(0.0)).abs() < 0.1 * p);
    }

    #[test]
    fn matches_direct_evaluation() {
        let samples = normals(500, 1, 5);
        let grid = DensityGrid::centered(&[0.0], 3.0, 601).unwrap();
        let cfg = KdeConfig {
            bandwidth: Some(vec![0.4]),
            resamples: 0,
            ..Default::default()
        };
        let k = kde_estimate(&samples, &grid, &cfg, &StreamFamily::new(0)).unwrap();
        for i in (0..601).step_by(50) {
            let x = grid.point(i)[0];
            let direct: f64 = samples.iter().map(|s| phi((x - s[0]) / 0.4) / 0.4).sum::<f64>() / 500.0;
            assert!((k.values[i] - direct).abs() < 1e-3 * direct.max(0.01), "x = {x}");
        }
    }

    #[test]
    fn degenerate_inputs() {
        let grid = DensityGrid::centered(&[0.0], 1.0, 11).unwrap();
        let point_mass = vec![vec![0.5]; 1000];
        assert!(matches!(
            kde_estimate(&point_mass, &grid, &KdeConfig::default(), &StreamFamily::new(0)),
            Err(LabError::Bandwidth(_))
        ));
        assert!(kde_estimate(&normals(50, 1, 0), &grid, &KdeConfig::default(), &StreamFamily::new(0)).is_err());
        let bad = KdeConfig {
            bandwidth: Some(vec![0.0]),
            ..Default::default()
        };
        assert!(matches!(
            kde_estimate(&normals(200, 1, 0), &grid, &bad, &StreamFamily::new(0)),
            Err(LabError::Bandwidth(_))
        ));
        assert!(Axis::new(1.0, 1.0, 5).is_err());
    }

    #[test]
    fn bands_shrink_with_sample_size() {
        let grid = DensityGrid::centered(&[0.0], 2.0, 41).unwrap();
        let cfg = KdeConfig {
            bandwidth: Some(vec![0.25]),
            ..Default::default()
        };
        let w1 = kde_estimate(&normals(4000, 1, 7), &grid, &cfg, &StreamFamily::new(1))
            .unwrap()
            .mean_band_width();
        let w2 = kde_estimate(&normals(8000, 1, 8), &grid, &cfg, &StreamFamily::new(1))
            .unwrap()
            .mean_band_width();
        let r = w2 / w1;
        assert!((r - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.1, "ratio {r}");
    }
}
