//! Upper bound on `‖f‖_ℋ` for Hölder `f` when `H < 1/2`, through the
//! right-sided fractional derivative
//!     D^α_{t-} g(s) = [g(s)(t-s)^{-α} + α ∫_s^t (g(s) - g(u))(u-s)^{-1-α} du] / Γ(1-α),
//! with `α = 1/2 - H` and `g_u = u^{-α} f_u`. `f` is the linear interpolant of
//! its samples.

use std::sync::OnceLock;

use rayon::prelude::*;
use statrs::function::gamma::gamma as gamma_fn;

use crate::error::{LabError, Result};
use crate::fbm::{HurstIndex, Regime, TimeGrid};
use crate::quadrature::{gauss_on, integrate, legendre_rule, QuadratureConfig};

/// Sup bound `a`, `γ`-Hölder seminorm bound `b`, exponent and horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderBoundInputs {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub t: f64,
}

impl HolderBoundInputs {
    pub fn new(a: f64, b: f64, gamma: f64, t: f64, h: HurstIndex) -> Result<Self> {
        if !(a >= 0.0 && b >= 0.0) {
            return Err(LabError::Domain("a and b must be nonnegative".into()));
        }
        let lo = 0.5 - h.value();
        if !(gamma > lo && gamma < 0.5) {
            return Err(LabError::Domain(format!("γ = {gamma} outside ({lo}, 1/2)")));
        }
        Ok(Self { a, b, gamma, t })
    }

    /// Measured `a = sup|f|` and `b = max |f_i - f_j| / |t_i - t_j|^γ` from samples.
    pub fn measure(grid: &TimeGrid, values: &[f64], gamma: f64, h: HurstIndex) -> Result<Self> {
        let a = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let times = grid.times();
        let mut b = 0.0f64;
        for i in 0..times.len() {
            for j in i + 1..times.len() {
                b = b.max((values[j] - values[i]).abs() / (times[j] - times[i]).powf(gamma));
            }
        }
        Self::new(a, b, gamma, grid.terminal(), h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HnormReport {
    /// `∫_0^t s^{1-2H} |D^α_{t-} g_s|² ds`.
    pub integral: f64,
    /// `κ · integral`, with `κ` fixed so that constants have norm `c² t^{2H}`.
    pub norm_sq: f64,
    /// `c (a t^H + b t^{γ+H})²`.
    pub envelope: f64,
    pub envelope_constant: f64,
    pub kappa: f64,
}

impl HnormReport {
    pub fn dominated(&self) -> bool {
        self.norm_sq <= self.envelope
    }
}

struct Interp<'a> {
    times: &'a [f64],
    values: &'a [f64],
}

impl Interp<'_> {
    fn eval(&self, u: f64) -> f64 {
        let n = self.times.len();
        let j = self.times.partition_point(|&x| x <= u).clamp(1, n - 1);
        let (a, b) = (self.times[j - 1], self.times[j]);
        let w = (u - a) / (b - a);
        self.values[j - 1] + w * (self.values[j] - self.values[j - 1])
    }
}

/// `Γ(1-α) s^α D^α_{t-} g(s)`.
fn scaled_derivative(f: &Interp, alpha: f64, t: f64, s: f64, cfg: &QuadratureConfig) -> f64 {
    let fs = f.eval(s);
    let integrand = |u: f64| {
        if u <= s {
            return 0.0;
        }
        (fs - (s / u).powf(alpha) * f.eval(u)) * (u - s).powf(-1.0 - alpha)
    };
    let times = f.times;
    let mut acc = 0.0;
    let mut lo = s;
    let first = times.partition_point(|&x| x <= s);
    for &node in times[first..].iter().chain(std::iter::once(&t)) {
        let hi = node.min(t);
        if hi > lo {
            acc += integrate(integrand, lo, hi, &[s], cfg);
            lo = hi;
        }
    }
    fs * (t - s).powf(-alpha) + alpha * acc
}

fn fractional_integral(grid: &TimeGrid, values: &[f64], alpha: f64, cfg: &QuadratureConfig) -> f64 {
    let f = Interp {
        times: grid.times(),
        values,
    };
    let t = grid.terminal();
    let times = grid.times();
    let n = grid.cells();
    let rule = legendre_rule(cfg.nodes_per_panel);
    let cells: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let (a, b) = (times[j], times[j + 1]);
            let e2 = |s: f64| scaled_derivative(&f, alpha, t, s, cfg).powi(2);
            if j == 0 || j == n - 1 {
                integrate(e2, a, b, &[0.0, t], cfg)
            } else {
                let m = 0.5 * (a + b);
                gauss_on(&rule, a, m, e2) + gauss_on(&rule, m, b, e2)
            }
        })
        .collect();
    cells.iter().sum::<f64>() / gamma_fn(1.0 - alpha).powi(2)
}

/// `κ` with `κ ∫ s^{1-2H} |D^α_{t-}(u^{-α})|² ds = t^{2H}`; independent of `t` by scaling.
fn kappa(h: f64, cfg: &QuadratureConfig) -> f64 {
    let grid = TimeGrid::uniform(1, 1.0).expect("unit grid");
    1.0 / fractional_integral(&grid, &[1.0, 1.0], 0.5 - h, cfg)
}

/// `J(α) = ∫_1^∞ (1 - v^{-α}) (v-1)^{-1-α} dv`.
fn tail_constant(alpha: f64, cfg: &QuadratureConfig) -> f64 {
    let near = integrate(|v| (1.0 - v.powf(-alpha)) * (v - 1.0).powf(-1.0 - alpha), 1.0, 2.0, &[1.0], cfg);
    // v = 1/w on [2, ∞).
    let far = integrate(
        |w| (1.0 - w.powf(alpha)) * w.powf(alpha - 1.0) * (1.0 - w).powf(-1.0 - alpha),
        0.0,
        0.5,
        &[0.0],
        cfg,
    );
    near + far
}

/// The constant `c` in `‖f‖²_ℋ ≤ c (a t^H + b t^{γ+H})²`.
pub fn envelope_constant(h: HurstIndex, gamma: f64) -> f64 {
    let cfg = QuadratureConfig::default();
    let hv = h.value();
    let alpha = 0.5 - hv;
    let j = tail_constant(alpha, &cfg);
    let c_a = (1.0 + 2.0 * alpha * alpha * j * j) / hv;
    let c_b = 2.0 * alpha * alpha / ((gamma - alpha).powi(2) * (gamma + hv));
    kappa_cached(hv) / gamma_fn(1.0 - alpha).powi(2) * c_a.max(c_b)
}

fn kappa_cached(h: f64) -> f64 {
    static CACHE: OnceLock<std::sync::Mutex<Vec<(f64, f64)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(&(_, k)) = cache.lock().unwrap().iter().find(|(x, _)| *x == h) {
        return k;
    }
    let k = kappa(h, &QuadratureConfig::default());
    cache.lock().unwrap().push((h, k));
    k
}

/// Computes the fractional-derivative norm of the sampled `f` and its Hölder envelope.
pub fn hnorm_upper_rough(inputs: &HolderBoundInputs, h: HurstIndex, grid: &TimeGrid, values: &[f64]) -> Result<HnormReport> {
    if h.regime() != Regime::Rough {
        return Err(LabError::Regime(format!("hnorm_upper_rough needs H < 1/2, got {}", h.value())));
    }
    if values.len() != grid.len() {
        return Err(LabError::GridMismatch("one sample per grid node required".into()));
    }
    if (grid.terminal() - inputs.t).abs() > 1e-12 {
        return Err(LabError::GridMismatch("grid must end at the horizon t".into()));
    }
    let hv = h.value();
    let cfg = QuadratureConfig::default();
    let integral = if values.iter().all(|&v| v == 0.0) {
        0.0
    } else {
        fractional_integral(grid, values, 0.5 - hv, &cfg)
    };
    let kappa = kappa_cached(hv);
    let c = envelope_constant(h, inputs.gamma);
    let t = inputs.t;
    let envelope = c * (inputs.a * t.powf(hv) + inputs.b * t.powf(inputs.gamma + hv)).powi(2);
    Ok(HnormReport {
        integral,
        norm_sq: kappa * integral,
        envelope,
        envelope_constant: c,
        kappa,
    })
}
