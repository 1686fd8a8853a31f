use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Hurst index `H ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstIndex(f64);

/// Regularity regime of the kernel formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Rough,
    Brownian,
    Smooth,
}

impl HurstIndex {
    pub fn new(h: f64) -> Result<Self> {
        if h > 0.0 && h < 1.0 {
            Ok(Self(h))
        } else {
            Err(LabError::Domain(format!("Hurst index {h} outside (0, 1)")))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn regime(self) -> Regime {
        if self.0 == 0.5 {
            Regime::Brownian
        } else if self.0 > 0.5 {
            Regime::Smooth
        } else {
            Regime::Rough
        }
    }

    /// `2H`.
    #[inline]
    pub fn two_h(self) -> f64 {
        2.0 * self.0
    }
}

impl TryFrom<f64> for HurstIndex {
    type Error = LabError;
    fn try_from(h: f64) -> Result<Self> {
        Self::new(h)
    }
}

impl From<HurstIndex> for f64 {
    fn from(h: HurstIndex) -> f64 {
        h.0
    }
}

/// Strictly increasing times in `[0, 1]` starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

/// Relative tolerance when matching times between grids.
const MATCH_TOL: f64 = 1e-12;

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(LabError::Domain("a time grid needs at least two nodes".into()));
        }
        if times[0] != 0.0 {
            return Err(LabError::Domain(format!("grid starts at {} instead of 0", times[0])));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(LabError::Domain(format!("grid not strictly increasing at {} -> {}", w[0], w[1])));
        }
        let last = *times.last().unwrap();
        if !(last <= 1.0) {
            return Err(LabError::Domain(format!("grid ends at {last} > 1")));
        }
        Ok(Self { times })
    }

    /// `n` equal cells on `[0, t_end]`.
    pub fn uniform(n: usize, t_end: f64) -> Result<Self> {
        if n == 0 {
            return Err(LabError::Domain("uniform grid needs n >= 1".into()));
        }
        let mut times: Vec<f64> = (0..=n).map(|i| t_end * i as f64 / n as f64).collect();
        times[n] = t_end;
        Self::new(times)
    }

    /// Splits every cell of `self` into `factor` equal sub-cells.
    pub fn refine(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let mut times = Vec::with_capacity((self.times.len() - 1) * factor + 1);
        for w in self.times.windows(2) {
            for k in 0..factor {
                times.push(w[0] + (w[1] - w[0]) * k as f64 / factor as f64);
            }
        }
        times.push(*self.times.last().unwrap());
        Self { times }
    }

    #[inline]
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.times.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    #[inline]
    pub fn terminal(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn cells(&self) -> usize {
        self.times.len() - 1
    }

    pub fn mesh(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Index of the node equal to `t` (within a relative tolerance).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = MATCH_TOL * t.abs().max(1.0);
        let pos = self.times.partition_point(|&x| x < t - tol);
        (pos < self.times.len() && (self.times[pos] - t).abs() <= tol).then_some(pos)
    }

    /// Node indices of `coarse` inside `self`, if `self` refines it.
    pub fn embedding_of(&self, coarse: &TimeGrid) -> Result<Vec<usize>> {
        coarse
            .times
            .iter()
            .map(|&t| {
                self.index_of(t)
                    .ok_or_else(|| LabError::GridMismatch(format!("time {t} is not a node of the finer grid")))
            })
            .collect()
    }

    /// Cell index `j` with `times[j] <= t < times[j+1]` (last cell for `t = terminal`).
    pub fn cell_of(&self, t: f64) -> usize {
        let pos = self.times.partition_point(|&x| x <= t);
        pos.saturating_sub(1).min(self.cells() - 1)
    }
}
