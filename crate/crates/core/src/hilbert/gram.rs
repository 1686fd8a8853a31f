use nalgebra::{Cholesky, DMatrix};

use super::step::{union_breakpoints, StepFunction};
use crate::error::{LabError, Result};
use crate::fbm::{increment_covariance, HurstIndex, Regime, TimeGrid};

/// Gram matrix `Q_{jk} = E[Δ_j B Δ_k B]` of fBm increments over a partition.
#[derive(Debug, Clone)]
pub struct IncrementGram {
    times: Vec<f64>,
    q: DMatrix<f64>,
}

impl IncrementGram {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.q.row_iter().map(|r| r.sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.q.sum()
    }
}

fn gram_matrix(times: &[f64], h: HurstIndex) -> DMatrix<f64> {
    let n = times.len() - 1;
    DMatrix::from_fn(n, n, |j, k| increment_covariance(times[j], times[j + 1], times[k], times[k + 1], h))
}

/// Builds and validates the increment Gram matrix of `partition`.
pub fn increment_gram(partition: &TimeGrid, h: HurstIndex) -> Result<IncrementGram> {
    let times = partition.times().to_vec();
    let q = gram_matrix(&times, h);
    if Cholesky::new(q.clone()).is_none() {
        return Err(LabError::Factorization(format!(
            "increment Gram matrix on {} cells is not positive definite",
            times.len() - 1
        )));
    }
    let gram = IncrementGram { times, q };
    let scale = gram.q.amax();
    if let Some((j, s)) = gram.row_sums().into_iter().enumerate().find(|(_, s)| *s < -1e-12 * scale.max(1.0)) {
        return Err(LabError::Precondition(format!("row {j} of the Gram matrix sums to {s}")));
    }
    Ok(gram)
}

/// `Σ_{j,k} ⟨φ_j, ψ_k⟩ E[Δ_j B Δ_k B]` on the partition `times`.
fn bilinear_on(phi: &StepFunction, psi: &StepFunction, times: &[f64], h: HurstIndex) -> f64 {
    let d = phi.dim();
    let n = times.len() - 1;
    let mut pv = vec![0.0; n * d];
    let mut qv = vec![0.0; n * d];
    for j in 0..n {
        phi.eval(times[j], &mut pv[j * d..(j + 1) * d]);
        psi.eval(times[j], &mut qv[j * d..(j + 1) * d]);
    }
    let mut acc = 0.0;
    for j in 0..n {
        let a = &pv[j * d..(j + 1) * d];
        if a.iter().all(|&v| v == 0.0) {
            continue;
        }
        let mut row = 0.0;
        for k in 0..n {
            let b = &qv[k * d..(k + 1) * d];
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            if dot != 0.0 {
                row += dot * increment_covariance(times[j], times[j + 1], times[k], times[k + 1], h);
            }
        }
        acc += row;
    }
    acc
}

fn check_dims(phi: &StepFunction, psi: &StepFunction) -> Result<()> {
    if phi.dim() != psi.dim() {
        return Err(LabError::GridMismatch("step functions of different dimension".into()));
    }
    Ok(())
}

/// `⟨φ, ψ⟩_ℋ` for `H > 1/2`: `H(2H-1) ∫∫ |s-t|^{2H-2} ⟨φ_s, ψ_t⟩ ds dt`,
/// evaluated exactly cell by cell.
pub fn inner_smooth(phi: &StepFunction, psi: &StepFunction, h: HurstIndex) -> Result<f64> {
    if h.regime() != Regime::Smooth {
        return Err(LabError::Regime(format!("inner_smooth needs H > 1/2, got {}", h.value())));
    }
    check_dims(phi, psi)?;
    let times = union_breakpoints(phi.breakpoints(), psi.breakpoints());
    Ok(bilinear_on(phi, psi, &times, h))
}

/// Result of the partition-limit inner product for `H < 1/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoughInner {
    pub value: f64,
    /// Value at the previous refinement level.
    pub previous: f64,
    pub cells: usize,
    pub converged: bool,
}

impl RoughInner {
    pub fn difference(&self) -> f64 {
        (self.value - self.previous).abs()
    }
}

/// `⟨φ, ψ⟩_ℋ` for `H < 1/2` as the limit of `Σ ⟨φ_{t_{j-1}}, ψ_{t_{k-1}}⟩ Q_{jk}`
/// over dyadic refinements of the common partition.
pub fn inner_rough(phi: &StepFunction, psi: &StepFunction, h: HurstIndex, max_levels: usize) -> Result<RoughInner> {
    if h.regime() != Regime::Rough {
        return Err(LabError::Regime(format!("inner_rough needs H < 1/2, got {}", h.value())));
    }
    check_dims(phi, psi)?;
    const MAX_CELLS: usize = 1 << 12;
    let mut times = union_breakpoints(phi.breakpoints(), psi.breakpoints());
    let mut previous = bilinear_on(phi, psi, &times, h);
    let mut level = 0;
    loop {
        let next_cells = 2 * (times.len() - 1);
        if level >= max_levels.max(1) || next_cells > MAX_CELLS {
            return Ok(RoughInner {
                value: previous,
                previous,
                cells: times.len() - 1,
                converged: false,
            });
        }
        times = TimeGrid::new(times.clone()).map(|g| g.refine(2).times().to_vec()).unwrap_or(times);
        let value = bilinear_on(phi, psi, &times, h);
        level += 1;
        if (value - previous).abs() <= 1e-4 * value.abs().max(f64::MIN_POSITIVE) {
            return Ok(RoughInner {
                value,
                previous,
                cells: times.len() - 1,
                converged: true,
            });
        }
        previous = value;
    }
}
