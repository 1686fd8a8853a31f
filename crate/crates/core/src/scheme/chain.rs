use std::io::Write;

use crate::error::{LabError, Result};
use crate::fbm::HurstIndex;

/// Points `y_0 = a, …, y_n = x` on the segment from `a` to `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub n: usize,
    pub points: Vec<Vec<f64>>,
    pub sigma_n: f64,
}

impl Chain {
    pub fn max_step(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `i, y_0, …, y_{m-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let m = self.points[0].len();
        let mut header = vec!["i".to_string()];
        header.extend((0..m).map(|c| format!("y_{c}")));
        w.write_record(&header)?;
        for (i, y) in self.points.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(y.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `n = ⌈c_2|x−a|²/t^{2H}⌉` (at least 1), `y_i = a + (i/n)(x−a)`, `σ_n = t^H/√n`;
/// every step is checked against `c_1σ_n`.
pub fn chain_construct(a: &[f64], x: &[f64], t: f64, h: HurstIndex, c1: f64, c2: f64) -> Result<Chain> {
    if a.len() != x.len() || a.is_empty() {
        return Err(LabError::GridMismatch("a and x must share a positive dimension".into()));
    }
    if !(c1 > 0.0 && c2 > 0.0 && t > 0.0) {
        return Err(LabError::Domain("c1, c2 and t must be positive".into()));
    }
    if c2.powf(-0.5) > c1 * (1.0 + 1e-12) {
        return Err(LabError::Precondition(format!("need c2^(-1/2) <= c1, got c1={c1}, c2={c2}")));
    }
    let dist2: f64 = a.iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum();
    let n = ((c2 * dist2 / t.powf(h.two_h())).ceil() as usize).max(1);
    let points: Vec<Vec<f64>> = (0..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            a.iter().zip(x).map(|(p, q)| p + s * (q - p)).collect()
        })
        .collect();
    let chain = Chain {
        n,
        points,
        sigma_n: t.powf(h.value()) / (n as f64).sqrt(),
    };
    if chain.max_step() > c1 * chain.sigma_n * (1.0 + 1e-12) {
        return Err(LabError::Precondition(format!(
            "chain step {} exceeds c1 σ_n = {}",
            chain.max_step(),
            c1 * chain.sigma_n
        )));
    }
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h() -> HurstIndex {
        HurstIndex::new(0.75).unwrap()
    }

    #[test]
    fn trivial_chain() {
        let c = chain_construct(&[1.0, 2.0], &[1.0, 2.0], 0.5, h(), 1.0, 1.0).unwrap();
        assert_eq!(c.n, 1);
        assert_eq!(c.points, vec![vec![1.0, 2.0], vec![1.0, 2.0]]);
    }

    #[test]
    fn step_identity_and_scaling() {
        let (c1, c2) = (2.0, 4.0);
        // c2|x−a|²/t^{2H} an integer: steps equal c2^{-1/2}σ_n exactly.
        let c = chain_construct(&[0.0], &[3.0], 1.0, h(), c1, c2).unwrap();
        assert_eq!(c.n, 36);
        assert!((c.max_step() - c2.powf(-0.5) * c.sigma_n).abs() < 1e-14);
        let n1 = chain_construct(&[0.0], &[1.5], 1.0, h(), c1, c2).unwrap().n;
        let n2 = chain_construct(&[0.0], &[3.0], 1.0, h(), c1, c2).unwrap().n;
        assert_eq!(n2, 4 * n1);
        for x in [0.3, 1.7, 5.2] {
            let c = chain_construct(&[0.0, 0.0], &[x, -x], 0.4, h(), c1, c2).unwrap();
            assert!(c.max_step() <= c1 * c.sigma_n);
        }
    }

    #[test]
    fn incompatible_constants() {
        assert!(matches!(
            chain_construct(&[0.0], &[1.0], 1.0, h(), 0.1, 1.0),
            Err(LabError::Precondition(_))
        ));
        let mut buf = Vec::new();
        chain_construct(&[0.0], &[1.0], 1.0, h(), 1.0, 1.0)
            .unwrap()
            .write_csv(&mut buf)
            .unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("i,y_0\n0,0\n"));
    }
}
