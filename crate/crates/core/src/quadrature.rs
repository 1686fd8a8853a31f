//! Gauss–Legendre quadrature on geometrically graded panels.
//!
//! Every integrand in this crate has algebraic endpoint singularities
//! (`u^{-α}`, `(t-u)^{H-1/2}`, …). Panels are refined toward the singular
//! points until each accepted panel sits at a distance of at least
//! `accept_ratio` times its own width from every singularity, which gives
//! exponential convergence of a fixed-order rule on each panel.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::laguerre::GaussLaguerre;
use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

/// Panel-refinement parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub nodes_per_panel: usize,
    /// Width fraction of the panel kept next to a touching singularity.
    pub grading_ratio: f64,
    /// A panel is accepted when `distance >= accept_ratio * width`.
    pub accept_ratio: f64,
    pub max_depth: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            nodes_per_panel: 16,
            grading_ratio: 1.0 / 3.0,
            accept_ratio: 0.5,
            max_depth: 128,
        }
    }
}

pub type Rule = Arc<Vec<(f64, f64)>>;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, cached per order.
pub fn legendre_rule(n: usize) -> Rule {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let rule = GaussLegendre::new(n.max(2)).expect("order >= 2");
            let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            Arc::new(pairs)
        })
        .clone()
}

/// Gauss–Laguerre nodes and weights for the weight `e^{-θ}` on `[0, ∞)`.
pub fn laguerre_rule(n: usize) -> Vec<(f64, f64)> {
    let rule = GaussLaguerre::new(n.max(2), 0.0).expect("order >= 2");
    let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

/// Applies a fixed rule on `[a, b]`.
pub fn gauss_on<F: FnMut(f64) -> f64>(rule: &[(f64, f64)], a: f64, b: f64, mut f: F) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for &(x, w) in rule {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// A point where the integrand (or its analytic continuation) is singular.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Singularity {
    pub re: f64,
    pub im: f64,
}

impl Singularity {
    pub fn real(x: f64) -> Self {
        Self { re: x, im: 0.0 }
    }

    pub fn complex(re: f64, im: f64) -> Self {
        Self { re, im: im.abs() }
    }
}

/// Splits `[a, b]` into panels graded toward the given singular points.
///
/// Singular points may lie outside, on the boundary of, or inside `[a, b]`;
/// complex points are refined against their distance to the real segment.
pub fn graded_panels(a: f64, b: f64, singular: &[Singularity], cfg: &QuadratureConfig) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if !(b > a) {
        return out;
    }
    // Panels narrower than this carry a negligible share of any integrable singularity.
    let floor = (b - a) * 1e-40;
    let mut stack = vec![(a, b, 0usize)];
    while let Some((x, y, depth)) = stack.pop() {
        let w = y - x;
        let mut dist = f64::INFINITY;
        let mut interior = None;
        let mut touch_left = false;
        let mut touch_right = false;
        for s in singular {
            let p = s.re;
            let d_real = if p < x {
                x - p
            } else if p > y {
                p - y
            } else {
                0.0
            };
            let d = d_real.hypot(s.im);
            if s.im == 0.0 {
                if p > x && p < y {
                    interior = Some(p);
                }
                touch_left |= p == x;
                touch_right |= p == y;
            } else if d < cfg.accept_ratio * w && p > x && p < y {
                interior = interior.or(Some(p));
            }
            dist = dist.min(d);
        }
        let unresolvable = w <= floor || w <= 1024.0 * f64::EPSILON * x.abs().max(y.abs());
        if dist >= cfg.accept_ratio * w || depth >= cfg.max_depth || unresolvable {
            out.push((x, y));
            continue;
        }
        let split = if let Some(p) = interior {
            p
        } else if touch_left && touch_right {
            0.5 * (x + y)
        } else if touch_left {
            x + cfg.grading_ratio * w
        } else if touch_right {
            y - cfg.grading_ratio * w
        } else {
            0.5 * (x + y)
        };
        stack.push((split, y, depth + 1));
        stack.push((x, split, depth + 1));
    }
    out.sort_by(|p, q| p.0.total_cmp(&q.0));
    out
}

/// Integrates `f` over `[a, b]` with panels graded toward `singular`.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, singular: &[f64], cfg: &QuadratureConfig) -> f64 {
    let points: Vec<Singularity> = singular.iter().map(|&p| Singularity::real(p)).collect();
    integrate_with(f, a, b, &points, cfg)
}

/// As [`integrate`], with possibly complex singular points.
pub fn integrate_with<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, singular: &[Singularity], cfg: &QuadratureConfig) -> f64 {
    if b == a {
        return 0.0;
    }
    if b < a {
        return -integrate_with(f, b, a, singular, cfg);
    }
    let rule = legendre_rule(cfg.nodes_per_panel);
    let panels = graded_panels(a, b, singular, cfg);
    let mut acc = 0.0;
    for (x, y) in panels {
        acc += gauss_on(&rule, x, y, &mut f);
    }
    acc
}

/// Pairwise (cascade) summation in a fixed shape, independent of threading.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_power_singularities() {
        let cfg = QuadratureConfig::default();
        // ∫_0^1 x^{-0.7} dx = 1/0.3
        let v = integrate(|x| x.powf(-0.7), 0.0, 1.0, &[0.0], &cfg);
        assert!((v - 1.0 / 0.3).abs() < 1e-9, "{v}");
        // ∫_0^2 (2-x)^{-0.4} x^{-0.4} dx = 2^{0.2} B(0.6, 0.6)
        let b = statrs::function::beta::beta(0.6, 0.6);
        let v = integrate(|x| (2.0 - x).powf(-0.4) * x.powf(-0.4), 0.0, 2.0, &[0.0, 2.0], &cfg);
        // Resolution next to a nonzero endpoint is limited by the spacing of doubles.
        assert!((v - 2f64.powf(0.2) * b).abs() < 1e-7, "{v}");
    }

    #[test]
    fn nearby_external_singularity() {
        let cfg = QuadratureConfig::default();
        let eps = 1e-9;
        // ∫_0^1 1/(x+eps) dx
        let v = integrate(|x| 1.0 / (x + eps), 0.0, 1.0, &[-eps], &cfg);
        let exact = ((1.0 + eps) / eps).ln();
        assert!((v - exact).abs() < 1e-11 * exact, "{v} vs {exact}");
    }

    #[test]
    fn laguerre_weights_sum_to_one() {
        let rule = laguerre_rule(16);
        let s: f64 = rule.iter().map(|p| p.1).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pairwise_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-12);
    }
}
