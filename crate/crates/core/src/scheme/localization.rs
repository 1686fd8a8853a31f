use std::sync::OnceLock;

use crate::error::{LabError, Result};
use crate::quadrature::{gauss_on, legendre_rule};
use crate::scheme::Partition;

fn bump_shape(x: f64) -> f64 {
    if x.abs() < 1.0 {
        (-1.0 / (1.0 - x * x)).exp()
    } else {
        0.0
    }
}

/// `∫_0^z exp(−1/(1−x²)) dx` for `0 ≤ z ≤ 1`, by Gauss–Legendre on 32 equal panels.
fn half_mass(z: f64) -> f64 {
    let rule = legendre_rule(16);
    let panels = 32;
    let w = z / panels as f64;
    (0..panels)
        .map(|k| gauss_on(&rule, k as f64 * w, (k + 1) as f64 * w, bump_shape))
        .sum()
}

/// `c_φ` with `∫ φ = 1` for `φ(x) = c_φ exp(−1/(1−x²)) 1_{|x|<1}`.
pub fn bump_constant() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| 0.5 / half_mass(1.0))
}

/// `Φ_{M,ε}(y) = 1 − ∫_{−∞}^y φ_ε(x − M) dx`, a smooth non-increasing step
/// from 1 (below `M − ε`) to 0 (above `M + ε`), with `φ_ε(x) = ε^{-1}φ(x/ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationFn {
    pub level: f64,
    pub eps: f64,
    pub c_phi: f64,
}

impl LocalizationFn {
    pub fn new(level: f64, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(LabError::Domain(format!("localization width must be positive, got {eps}")));
        }
        Ok(Self {
            level,
            eps,
            c_phi: bump_constant(),
        })
    }
}

pub fn localization_eval(f: &LocalizationFn, y: f64) -> f64 {
    let z = (y - f.level) / f.eps;
    if z <= -1.0 {
        1.0
    } else if z >= 1.0 {
        0.0
    } else if z >= 0.0 {
        (0.5 - f.c_phi * half_mass(z)).clamp(0.0, 1.0)
    } else {
        (0.5 + f.c_phi * half_mass(-z)).clamp(0.0, 1.0)
    }
}

/// `c_i = (λ/4)σ_n²` and `ε_i = c_i/2`, equal on every cell of the partition.
pub fn localization_params(partition: &Partition, lambda: f64) -> (f64, f64) {
    let c = 0.25 * lambda * partition.sigma_n_sq;
    (c, 0.5 * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{HurstIndex, KernelTable};
    use crate::scheme::build_partition;

    #[test]
    fn normalization_and_values() {
        let rule = legendre_rule(16);
        let total: f64 = (0..64)
            .map(|k| gauss_on(&rule, -1.0 + k as f64 / 32.0, -1.0 + (k + 1) as f64 / 32.0, bump_shape))
            .sum();
        assert!((bump_constant() * total - 1.0).abs() < 1e-12);
        let f = LocalizationFn::new(2.0, 0.5).unwrap();
        assert_eq!(localization_eval(&f, 1.5), 1.0);
        assert_eq!(localization_eval(&f, -10.0), 1.0);
        assert_eq!(localization_eval(&f, 2.0), 0.5);
        assert_eq!(localization_eval(&f, 2.5), 0.0);
        assert!(LocalizationFn::new(1.0, 0.0).is_err());
    }

    #[test]
    fn monotone_and_symmetric() {
        let f = LocalizationFn::new(0.0, 1.0).unwrap();
        let mut prev = 1.0;
        for k in 0..=4000 {
            let y = -1.2 + 2.4 * k as f64 / 4000.0;
            let v = localization_eval(&f, y);
            assert!(v <= prev + 1e-14 && (0.0..=1.0).contains(&v));
            assert!((v + localization_eval(&f, -y) - 1.0).abs() < 1e-14);
            prev = v;
        }
    }

    #[test]
    fn params_from_partition() {
        let table = KernelTable::new(HurstIndex::new(0.75).unwrap(), 1.0).unwrap();
        let p = build_partition(1.0, 4, &table).unwrap();
        let (c, e) = localization_params(&p, 4.0);
        assert!((c - 0.25).abs() < 1e-15 && e == c / 2.0 && c > 0.0);
    }
}
