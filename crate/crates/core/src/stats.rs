//! Small statistical helpers shared by the Monte Carlo checks.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::quadrature::pairwise_sum;

/// Sample mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let (mean, _) = mean_se(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    pairwise_sum(&sq) / (values.len() as f64 - 1.0)
}

/// Standard error of the sample variance, from the fourth central moment.
pub fn variance_se(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let (mean, _) = mean_se(values);
    let m2: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    let m4: Vec<f64> = values.iter().map(|v| (v - mean).powi(4)).collect();
    let m2 = pairwise_sum(&m2) / n;
    let m4 = pairwise_sum(&m4) / n;
    ((m4 - m2 * m2) / n).sqrt()
}

/// Linear-interpolated empirical quantile, `q` in `[0, 1]`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Asymptotic Kolmogorov distribution tail `P(K > x)`.
pub fn kolmogorov_tail(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Outcome of a Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl KsResult {
    pub fn passes(&self, level: f64) -> bool {
        self.p_value > level
    }
}

/// One-sample KS test of `samples` against a centered normal with the given variance.
pub fn ks_normal(samples: &[f64], variance: f64) -> KsResult {
    let normal = Normal::new(0.0, variance.sqrt()).expect("positive variance");
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in s.iter().enumerate() {
        let f = normal.cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let en = n.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_tail((en + 0.12 + 0.11 / en) * d),
    }
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_tail((en + 0.12 + 0.11 / en) * d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{fill_normal, StreamFamily};

    #[test]
    fn ks_accepts_matching_law_and_rejects_scaled() {
        let mut x = vec![0.0; 5000];
        fill_normal(&mut StreamFamily::new(1).stream(0), &mut x);
        assert!(ks_normal(&x, 1.0).passes(0.01));
        assert!(!ks_normal(&x, 1.5).passes(0.01));
        let mut y = vec![0.0; 5000];
        fill_normal(&mut StreamFamily::new(2).stream(0), &mut y);
        assert!(ks_two_sample(&x, &y).passes(0.01));
        let shifted: Vec<f64> = y.iter().map(|v| v + 0.2).collect();
        assert!(!ks_two_sample(&x, &shifted).passes(0.01));
    }

    #[test]
    fn kolmogorov_tail_known_value() {
        // P(K > 1.628) ≈ 0.01
        assert!((kolmogorov_tail(1.6276) - 0.01).abs() < 2e-4);
    }
}
