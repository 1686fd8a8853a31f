//! The bilinear program `inf { xᵀ Q x̃ : x ≥ b, x̃ ≥ a }`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Checks symmetry, positive definiteness and nonnegative row sums.
pub fn check_admissible(q: &DMatrix<f64>) -> Result<()> {
    if !q.is_square() || q.nrows() == 0 {
        return Err(LabError::Precondition("Q must be a nonempty square matrix".into()));
    }
    let scale = q.amax().max(f64::MIN_POSITIVE);
    if (q - q.transpose()).amax() > 1e-12 * scale {
        return Err(LabError::Precondition("Q is not symmetric".into()));
    }
    if Cholesky::new(q.clone()).is_none() {
        return Err(LabError::Precondition("Q is not positive definite".into()));
    }
    for (i, row) in q.row_iter().enumerate() {
        let s = row.sum();
        if s < -1e-12 * scale {
            return Err(LabError::Precondition(format!("row {i} sums to {s} < 0")));
        }
    }
    Ok(())
}

/// `a b Σ_{ij} Q_{ij}`, the infimum attained at the corner `x = b·1`, `x̃ = a·1`.
pub fn qp_box_inf(q: &DMatrix<f64>, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(LabError::Precondition(format!("box bounds must be positive, got a={a}, b={b}")));
    }
    check_admissible(q)?;
    Ok(a * b * q.sum())
}

/// `xᵀ Q y`.
pub fn bilinear(q: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    x.dot(&(q * y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSearchConfig {
    pub starts: usize,
    pub iterations: usize,
    /// The search box is `[b, b (1 + span)] × [a, a (1 + span)]`.
    pub span: f64,
    pub seed: u64,
}

impl Default for QpSearchConfig {
    fn default() -> Self {
        Self {
            starts: 32,
            iterations: 200,
            span: 10.0,
            seed: 0,
        }
    }
}

/// Best value found by multi-start projected gradient with backtracking,
/// polished by exact alternating minimisation over each block.
pub fn qp_box_search(q: &DMatrix<f64>, a: f64, b: f64, cfg: &QpSearchConfig) -> f64 {
    let n = q.nrows();
    let (xl, xu) = (b, b * (1.0 + cfg.span));
    let (yl, yu) = (a, a * (1.0 + cfg.span));
    let project = |v: &mut DVector<f64>, lo: f64, hi: f64| v.iter_mut().for_each(|e| *e = e.clamp(lo, hi));
    (0..cfg.starts)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k as u64);
            let mut x = DVector::from_fn(n, |_, _| if k == 0 { xl } else { rng.gen_range(xl..=xu) });
            let mut y = DVector::from_fn(n, |_, _| if k == 0 { yl } else { rng.gen_range(yl..=yu) });
            let mut f = bilinear(q, &x, &y);
            let mut step = 1.0 / q.amax().max(f64::MIN_POSITIVE);
            for _ in 0..cfg.iterations {
                let gx = q * &y;
                let gy = q.transpose() * &x;
                let mut accepted = false;
                while step > 1e-14 {
                    let mut nx = &x - step * &gx;
                    let mut ny = &y - step * &gy;
                    project(&mut nx, xl, xu);
                    project(&mut ny, yl, yu);
                    let nf = bilinear(q, &nx, &ny);
                    if nf < f {
                        x = nx;
                        y = ny;
                        f = nf;
                        step *= 2.0;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            // For fixed y the objective is linear in x, so each block has a vertex minimiser.
            for _ in 0..4 * n + 4 {
                let gx = q * &y;
                x = DVector::from_fn(n, |i, _| if gx[i] > 0.0 { xl } else { xu });
                let gy = q.transpose() * &x;
                y = DVector::from_fn(n, |i, _| if gy[i] > 0.0 { yl } else { yu });
                let nf = bilinear(q, &x, &y);
                if nf >= f {
                    f = f.min(nf);
                    break;
                }
                f = nf;
            }
            f
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// Parses `n` followed by `n` whitespace-separated rows.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut tokens = text.split_whitespace();
    let n: usize = tokens
        .next()
        .ok_or_else(|| LabError::Config("empty matrix file".into()))?
        .parse()
        .map_err(|e| LabError::Config(format!("bad dimension: {e}")))?;
    let vals = tokens
        .map(|t| t.parse::<f64>().map_err(|e| LabError::Config(format!("bad entry {t:?}: {e}"))))
        .collect::<Result<Vec<f64>>>()?;
    if vals.len() != n * n {
        return Err(LabError::Config(format!("expected {} entries, found {}", n * n, vals.len())));
    }
    Ok(DMatrix::from_row_slice(n, n, &vals))
}

pub fn format_matrix(q: &DMatrix<f64>) -> String {
    let mut s = format!("{}\n", q.nrows());
    for row in q.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

/// A random admissible matrix: `G Gᵀ + diag(u)` with uniform entries,
/// rejected until all row sums are nonnegative.
pub fn random_admissible(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    loop {
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut q = &g * g.transpose();
        for i in 0..n {
            q[(i, i)] += rng.gen_range(0.05..1.0);
        }
        if check_admissible(&q).is_ok() {
            return q;
        }
    }
}
