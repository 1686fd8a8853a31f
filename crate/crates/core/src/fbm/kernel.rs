//! The Volterra kernel `K(t, s)` with `B_t = ∫_0^t K(t, s) dW_s`.
//!
//! For `H > 1/2`
//!     K(t,s) = c_H s^{1/2-H} ∫_s^t (u-s)^{H-3/2} u^{H-1/2} du,
//! for `H < 1/2`
//!     K(t,s) = c_{H,1} (t/s)^{H-1/2} (t-s)^{H-1/2}
//!            + c_{H,2} s^{1/2-H} ∫_s^t (u-s)^{H-1/2} u^{H-3/2} du,
//! with `c_{H,2} = (1/2 - H) c_{H,1}`. The inner integrals are evaluated after
//! the substitution `u = s + v^{1/|H∓1/2|}`, which turns the endpoint
//! singularity into a bounded integrand, then graded Gauss–Legendre panels.
//!
//! The constants are calibrated so that `∫_0^t K²(t,u) du = t^{2H}`; the
//! standard closed forms are kept alongside as a cross-check.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use statrs::function::beta::beta;

use super::{HurstIndex, Regime};
use crate::error::{LabError, Result};
use crate::quadrature::{graded_panels, integrate, integrate_with, QuadratureConfig, Singularity};

pub const KERNEL_CACHE_MAGIC: [u8; 4] = *b"FBMK";
pub const KERNEL_CACHE_VERSION: u32 = 1;

/// Calibrated kernel for a fixed Hurst index and terminal time.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    hurst: HurstIndex,
    t_terminal: f64,
    c_main: f64,
    c_second: f64,
    closed_form: f64,
    quad: QuadratureConfig,
    /// Panel boundaries on `[0, t_terminal]` and `∫_0^{node} K²(t_terminal, u) du`.
    nodes: Vec<f64>,
    cumulative: Vec<f64>,
}

/// Closed-form value of `c_H` (H > 1/2) or `c_{H,1}` (H < 1/2).
pub fn closed_form_constant(h: HurstIndex) -> f64 {
    let h = h.value();
    if h > 0.5 {
        (h * (2.0 * h - 1.0) / beta(2.0 - 2.0 * h, h - 0.5)).sqrt()
    } else if h < 0.5 {
        (2.0 * h / ((1.0 - 2.0 * h) * beta(1.0 - 2.0 * h, h + 0.5))).sqrt()
    } else {
        1.0
    }
}

/// Kernel with unit leading constant, given `s` and the gap `t - s` separately
/// so that evaluations next to the diagonal keep full relative precision.
fn unit_kernel(h: f64, s: f64, gap: f64, quad: &QuadratureConfig) -> f64 {
    if !(gap > 0.0) {
        return 0.0;
    }
    if h == 0.5 {
        return 1.0;
    }
    // inner = ∫_s^t (u-s)^{e-1} u^{power} du with u - s = y^m, m = k/e,
    // which leaves m y^{k-1} (s + y^m)^{power}: smooth at y = 0 once m >= 4.
    let (e, power) = if h > 0.5 { (h - 0.5, h - 0.5) } else { (h + 0.5, h - 1.5) };
    let k = (4.0 * e).ceil().max(1.0);
    let m = k / e;
    let radius = s.powf(1.0 / m);
    let sing = [Singularity::complex(radius * (PI / m).cos(), radius * (PI / m).sin())];
    let upper = gap.powf(1.0 / m);
    let inner = m * integrate_with(|y| y.powf(k - 1.0) * (s + y.powf(m)).powf(power), 0.0, upper, &sing, quad);
    if h > 0.5 {
        s.powf(0.5 - h) * inner
    } else {
        let t = s + gap;
        (t / s).powf(h - 0.5) * gap.powf(h - 0.5) + (0.5 - h) * s.powf(0.5 - h) * inner
    }
}

/// `∫_a^b g(u) du` for `g` singular at `0` and `t`, where `g` is given as a
/// function of `(s, t - s)`; the half next to `t` is integrated in the gap.
fn split_energy<F: Fn(f64, f64) -> f64>(g: F, t: f64, a: f64, b: f64, quad: &QuadratureConfig) -> f64 {
    let half = 0.5 * t;
    let mut acc = 0.0;
    if a < half {
        acc += integrate(|u| g(u, t - u), a, b.min(half), &[0.0], quad);
    }
    if b > half {
        let lo = (t - b).max(0.0);
        let hi = t - a.max(half);
        acc += integrate(|w| g(t - w, w), lo, hi, &[0.0], quad);
    }
    acc
}

impl KernelTable {
    /// Calibrates the kernel for `h` on `[0, t_terminal]` with default quadrature.
    pub fn new(h: HurstIndex, t_terminal: f64) -> Result<Self> {
        Self::with_quadrature(h, t_terminal, QuadratureConfig::default())
    }

    pub fn with_quadrature(h: HurstIndex, t_terminal: f64, quad: QuadratureConfig) -> Result<Self> {
        if !(t_terminal > 0.0 && t_terminal <= 1.0) {
            return Err(LabError::Domain(format!("terminal time {t_terminal} outside (0, 1]")));
        }
        let hv = h.value();
        let (c_main, c_second) = match h.regime() {
            Regime::Brownian => (1.0, 0.0),
            _ => {
                // K is homogeneous of degree H - 1/2, so calibrating at t = 1 fixes every t.
                let unit_energy = split_energy(|s, gap| unit_kernel(hv, s, gap, &quad).powi(2), 1.0, 0.0, 1.0, &quad);
                let c = unit_energy.sqrt().recip();
                if h.regime() == Regime::Smooth {
                    (c, 0.0)
                } else {
                    (c, (0.5 - hv) * c)
                }
            }
        };
        let mut table = Self {
            hurst: h,
            t_terminal,
            c_main,
            c_second,
            closed_form: closed_form_constant(h),
            quad,
            nodes: Vec::new(),
            cumulative: Vec::new(),
        };
        table.tabulate();
        Ok(table)
    }

    fn tabulate(&mut self) {
        let t = self.t_terminal;
        let panels = graded_panels(0.0, t, &[Singularity::real(0.0), Singularity::real(t)], &self.quad);
        let mut nodes = Vec::with_capacity(panels.len() + 1);
        let mut cumulative = Vec::with_capacity(panels.len() + 1);
        nodes.push(0.0);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for (a, b) in panels {
            acc += self.energy_raw(t, a, b);
            nodes.push(b);
            cumulative.push(acc);
        }
        self.nodes = nodes;
        self.cumulative = cumulative;
    }

    fn energy_raw(&self, t: f64, a: f64, b: f64) -> f64 {
        if self.hurst.regime() == Regime::Brownian {
            return b - a;
        }
        split_energy(|s, gap| self.k_gap(s, gap).powi(2), t, a, b, &self.quad)
    }

    #[inline]
    pub fn hurst(&self) -> HurstIndex {
        self.hurst
    }

    #[inline]
    pub fn t_terminal(&self) -> f64 {
        self.t_terminal
    }

    pub fn quadrature(&self) -> &QuadratureConfig {
        &self.quad
    }

    /// `c_H` for H > 1/2, `c_{H,1}` for H < 1/2.
    pub fn constant(&self) -> f64 {
        self.c_main
    }

    /// `c_{H,2}` (zero unless H < 1/2).
    pub fn second_constant(&self) -> f64 {
        self.c_second
    }

    pub fn closed_form_constant(&self) -> f64 {
        self.closed_form
    }

    /// Relative gap between the calibrated and closed-form constants.
    pub fn calibration_residual(&self) -> f64 {
        (self.c_main - self.closed_form).abs() / self.closed_form
    }

    /// Number of tabulated cumulative-energy nodes.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn k_raw(&self, t: f64, s: f64) -> f64 {
        self.k_gap(s, t - s)
    }

    /// `K(s + gap, s)`.
    #[inline]
    pub fn k_gap(&self, s: f64, gap: f64) -> f64 {
        if !(gap > 0.0) {
            return 0.0;
        }
        match self.hurst.regime() {
            Regime::Brownian => 1.0,
            _ => self.c_main * unit_kernel(self.hurst.value(), s, gap, &self.quad),
        }
    }

    /// `K(t, s)` for `0 < s < t ≤ t_terminal`.
    pub fn kernel_k(&self, t: f64, s: f64) -> Result<f64> {
        if !(s > 0.0) || !(s < t) {
            return Err(LabError::Domain(format!("kernel needs 0 < s < t, got s={s}, t={t}")));
        }
        if t > self.t_terminal * (1.0 + 1e-12) {
            return Err(LabError::Domain(format!("t={t} beyond the table horizon {}", self.t_terminal)));
        }
        Ok(self.k_raw(t, s))
    }

    /// `K(t, s)` extended by zero for `s ≥ t`; `s` must be positive.
    #[inline]
    pub fn k(&self, t: f64, s: f64) -> f64 {
        self.k_raw(t, s)
    }

    /// `∫_a^b K²(t, u) du` for `0 ≤ a ≤ b ≤ t`.
    pub fn kernel_energy(&self, t: f64, a: f64, b: f64) -> Result<f64> {
        if !(0.0 <= a && a <= b && b <= t * (1.0 + 1e-15)) {
            return Err(LabError::Domain(format!(
                "kernel energy needs 0 <= a <= b <= t, got a={a}, b={b}, t={t}"
            )));
        }
        if t > self.t_terminal * (1.0 + 1e-12) {
            return Err(LabError::Domain(format!("t={t} beyond the table horizon")));
        }
        if a == b {
            return Ok(0.0);
        }
        Ok(self.energy_raw(t, a, b.min(t)))
    }

    /// `∫_0^u K²(t_terminal, v) dv` from the tabulated panels.
    pub fn cumulative_energy(&self, u: f64) -> f64 {
        let t = self.t_terminal;
        if u <= 0.0 {
            return 0.0;
        }
        if u >= t {
            return *self.cumulative.last().unwrap();
        }
        if self.hurst.regime() == Regime::Brownian {
            return u;
        }
        let idx = self.nodes.partition_point(|&x| x <= u) - 1;
        let (base, next) = (self.nodes[idx], self.nodes[idx + 1]);
        if u - base <= next - u {
            self.cumulative[idx] + self.energy_raw(t, base, u)
        } else {
            self.cumulative[idx + 1] - self.energy_raw(t, u, next)
        }
    }

    /// `K(t, s) / (t − s)^{H−1/2}`, the ratio bounded below for H > 1/2.
    pub fn envelope_ratio(&self, t: f64, s: f64) -> Result<f64> {
        let k = self.kernel_k(t, s)?;
        Ok(k / (t - s).powf(self.hurst.value() - 0.5))
    }

    /// Writes the versioned binary cache.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&KERNEL_CACHE_MAGIC)?;
        w.write_all(&KERNEL_CACHE_VERSION.to_le_bytes())?;
        w.write_all(&self.hurst.value().to_le_bytes())?;
        w.write_all(&self.t_terminal.to_le_bytes())?;
        w.write_all(&(self.nodes.len() as u64).to_le_bytes())?;
        for v in [self.c_main, self.c_second, self.closed_form] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.quad.nodes_per_panel as u64).to_le_bytes())?;
        w.write_all(&self.quad.grading_ratio.to_le_bytes())?;
        w.write_all(&self.quad.accept_ratio.to_le_bytes())?;
        w.write_all(&(self.quad.max_depth as u64).to_le_bytes())?;
        for (n, c) in self.nodes.iter().zip(&self.cumulative) {
            w.write_all(&n.to_le_bytes())?;
            w.write_all(&c.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a cache written by [`KernelTable::write_cache`].
    pub fn read_cache(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != KERNEL_CACHE_MAGIC {
            return Err(LabError::CacheFormat("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != KERNEL_CACHE_VERSION {
            return Err(LabError::CacheFormat(format!("unsupported version {version}")));
        }
        let mut f = || -> Result<f64> {
            let mut b8 = [0u8; 8];
            r.read_exact(&mut b8)?;
            Ok(f64::from_le_bytes(b8))
        };
        let hurst = HurstIndex::new(f()?)?;
        let t_terminal = f()?;
        let count = f()?.to_bits() as usize;
        let c_main = f()?;
        let c_second = f()?;
        let closed_form = f()?;
        let nodes_per_panel = f()?.to_bits() as usize;
        let grading_ratio = f()?;
        let accept_ratio = f()?;
        let max_depth = f()?.to_bits() as usize;
        if count > 1 << 24 {
            return Err(LabError::CacheFormat(format!("implausible node count {count}")));
        }
        let mut nodes = Vec::with_capacity(count);
        let mut cumulative = Vec::with_capacity(count);
        for _ in 0..count {
            nodes.push(f()?);
            cumulative.push(f()?);
        }
        Ok(Self {
            hurst,
            t_terminal,
            c_main,
            c_second,
            closed_form,
            quad: QuadratureConfig {
                nodes_per_panel,
                grading_ratio,
                accept_ratio,
                max_depth,
            },
            nodes,
            cumulative,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(h: f64) -> KernelTable {
        KernelTable::new(HurstIndex::new(h).unwrap(), 1.0).unwrap()
    }

    // Reference values from an independent 25-digit quadrature of the
    // closed-form-normalised kernel.
    const REFERENCE: &[(f64, &[(f64, f64, f64)])] = &[
        (
            0.3,
            &[
                (1.0, 0.5, 0.873_014_114_338_668_05),
                (1.0, 0.1, 0.889_909_759_259_124_13),
                (0.7, 0.3, 0.922_365_145_750_407_69),
                (1.0, 0.999, 2.907_454_198_024_442_7),
                (0.5, 1e-6, 6.541_136_248_622_431_5),
            ],
        ),
        (
            0.75,
            &[
                (1.0, 0.5, 0.937_591_963_698_057_23),
                (1.0, 0.1, 1.271_826_030_873_252_9),
                (0.7, 0.3, 0.896_742_439_746_254_67),
                (1.0, 0.999, 0.190_222_221_224_357_77),
                (0.5, 1e-6, 11.981_145_501_598_762),
            ],
        ),
        (
            0.6,
            &[
                (1.0, 0.5, 1.011_531_420_149_450_5),
                (1.0, 0.1, 1.104_311_054_719_638_7),
                (0.7, 0.3, 0.991_224_885_174_858_91),
                (1.0, 0.999, 0.539_284_967_899_674_43),
                (0.5, 1e-6, 2.004_635_114_203_518),
            ],
        ),
        (
            0.2,
            &[
                (1.0, 0.5, 0.756_669_794_794_994_7),
                (1.0, 0.1, 0.864_013_156_021_567_3),
                (0.7, 0.3, 0.829_541_407_568_361_77),
                (1.0, 0.999, 4.419_757_056_446_445_1),
                (0.5, 1e-6, 22.689_002_369_043_226),
            ],
        ),
    ];

    #[test]
    fn matches_reference_values() {
        for (h, cases) in REFERENCE {
            let tab = table(*h);
            assert!(tab.calibration_residual() < 1e-8, "H={h}: residual {}", tab.calibration_residual());
            for &(t, s, want) in *cases {
                let got = tab.kernel_k(t, s).unwrap();
                assert!((got - want).abs() < 1e-9 * want, "H={h} K({t},{s}) = {got}, want {want}");
            }
        }
    }

    #[test]
    fn domain_errors() {
        let tab = table(0.75);
        assert!(tab.kernel_k(0.5, 0.5).is_err());
        assert!(tab.kernel_k(0.5, 0.0).is_err());
        assert!(tab.kernel_k(0.5, 0.7).is_err());
        assert!(tab.kernel_energy(1.0, 0.6, 0.5).is_err());
        assert_eq!(tab.kernel_energy(1.0, 0.3, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn brownian_shortcut() {
        let tab = table(0.5);
        assert_eq!(tab.kernel_k(0.8, 0.3).unwrap(), 1.0);
        assert!((tab.kernel_energy(1.0, 0.2, 0.7).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cumulative_energy_matches_direct() {
        let tab = table(0.75);
        for u in [0.001, 0.3, 0.77, 0.9999] {
            let direct = tab.kernel_energy(1.0, 0.0, u).unwrap();
            assert!((tab.cumulative_energy(u) - direct).abs() < 1e-12);
        }
        assert!((tab.cumulative_energy(1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cache_round_trip() {
        let tab = table(0.3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.bin");
        tab.write_cache(&path).unwrap();
        let back = KernelTable::read_cache(&path).unwrap();
        assert_eq!(tab, back);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(KernelTable::read_cache(&path), Err(LabError::CacheFormat(_))));
    }
}
