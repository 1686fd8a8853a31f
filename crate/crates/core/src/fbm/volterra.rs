use rayon::prelude::*;

use super::{KernelTable, ProcessLabel, Regime, SamplePath, TimeGrid};
use crate::error::{LabError, Result};
use crate::rng::{fill_normal, StreamFamily};

/// Wiener paths of dimension `d` on `grid`, one stream per path.
pub fn sample_wiener(grid: &TimeGrid, d: usize, n_paths: usize, family: &StreamFamily) -> Vec<SamplePath> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| wiener_path(grid, d, family, i))
        .collect()
}

/// A single Wiener path from stream `index` of `family`.
pub fn wiener_path(grid: &TimeGrid, d: usize, family: &StreamFamily, index: u64) -> SamplePath {
    let mut rng = family.stream(index);
    let n = grid.cells();
    let mut z = vec![0.0; n * d];
    fill_normal(&mut rng, &mut z);
    let mut path = SamplePath::zeros(grid.clone(), d, ProcessLabel::Wiener);
    let times = grid.times();
    for j in 0..n {
        let sd = (times[j + 1] - times[j]).sqrt();
        for c in 0..d {
            let prev = path.at(j)[c];
            path.at_mut(j + 1)[c] = prev + sd * z[j * d + c];
        }
    }
    path
}

/// Precomputed weights `K(t_l, m_j)` mapping Wiener increments on a fine grid
/// to fBm values on a coarser output grid (midpoint rule).
#[derive(Debug, Clone)]
pub struct VolterraOperator {
    w_grid: TimeGrid,
    out_grid: TimeGrid,
    /// For output node `l`: fine-grid cell count below `t_l` and the weights.
    rows: Vec<Vec<f64>>,
    brownian: bool,
}

impl VolterraOperator {
    pub fn new(table: &KernelTable, w_grid: &TimeGrid, out_grid: &TimeGrid) -> Result<Self> {
        let idx = w_grid.embedding_of(out_grid)?;
        if out_grid.terminal() > table.t_terminal() * (1.0 + 1e-12) {
            return Err(LabError::GridMismatch(format!(
                "output grid ends at {} beyond the kernel horizon {}",
                out_grid.terminal(),
                table.t_terminal()
            )));
        }
        let brownian = table.hurst().regime() == Regime::Brownian;
        let wt = w_grid.times();
        let rows = idx
            .par_iter()
            .map(|&l| {
                let t = wt[l];
                (0..l)
                    .map(|j| {
                        let m = 0.5 * (wt[j] + wt[j + 1]);
                        if brownian {
                            1.0
                        } else {
                            table.k_gap(m, t - m)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            w_grid: w_grid.clone(),
            out_grid: out_grid.clone(),
            rows,
            brownian,
        })
    }

    pub fn out_grid(&self) -> &TimeGrid {
        &self.out_grid
    }

    pub fn w_grid(&self) -> &TimeGrid {
        &self.w_grid
    }

    /// Weights `K(t_l, m_j)` of output node `l` over the fine cells below it
    /// (all ones in the Brownian case).
    pub fn row(&self, l: usize) -> &[f64] {
        &self.rows[l]
    }

    /// `B_{t_l} = Σ_j K(t_l, m_j) ΔW_j` for every output node.
    pub fn apply(&self, w: &SamplePath) -> Result<SamplePath> {
        if w.grid() != &self.w_grid {
            return Err(LabError::GridMismatch("Wiener path is not on the operator's grid".into()));
        }
        let d = w.dim();
        if self.brownian {
            let mut b = w.restrict(&self.out_grid)?;
            b = SamplePath::new(b.grid().clone(), d, b.raw().to_vec(), ProcessLabel::Fbm)?;
            return Ok(b);
        }
        let n = self.w_grid.cells();
        let mut dw = vec![0.0; n * d];
        for j in 0..n {
            for c in 0..d {
                dw[j * d + c] = w.at(j + 1)[c] - w.at(j)[c];
            }
        }
        let mut out = SamplePath::zeros(self.out_grid.clone(), d, ProcessLabel::Fbm);
        for (l, row) in self.rows.iter().enumerate() {
            let dst = out.at_mut(l);
            for (j, k) in row.iter().enumerate() {
                for c in 0..d {
                    dst[c] += k * dw[j * d + c];
                }
            }
        }
        Ok(out)
    }
}

/// One-shot Volterra transform of `w` onto `grid`.
pub fn volterra_build(w: &SamplePath, table: &KernelTable, grid: &TimeGrid) -> Result<SamplePath> {
    VolterraOperator::new(table, w.grid(), grid)?.apply(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{sample_fbm_cholesky, HurstIndex};
    use crate::stats::ks_two_sample;

    #[test]
    fn zero_noise_and_brownian_shortcut() {
        let grid = TimeGrid::uniform(8, 1.0).unwrap();
        let fine = grid.refine(4);
        let table = KernelTable::new(HurstIndex::new(0.7).unwrap(), 1.0).unwrap();
        let zero = SamplePath::zeros(fine.clone(), 1, ProcessLabel::Wiener);
        let b = volterra_build(&zero, &table, &grid).unwrap();
        assert!(b.raw().iter().all(|&v| v == 0.0));

        let half = KernelTable::new(HurstIndex::new(0.5).unwrap(), 1.0).unwrap();
        let w = wiener_path(&fine, 2, &StreamFamily::new(3), 0);
        let b = volterra_build(&w, &half, &grid).unwrap();
        assert_eq!(b.raw(), w.restrict(&grid).unwrap().raw());

        let off = TimeGrid::new(vec![0.0, 0.33, 1.0]).unwrap();
        assert!(matches!(volterra_build(&w, &table, &off), Err(LabError::GridMismatch(_))));
    }

    #[test]
    fn marginal_matches_cholesky() {
        let h = HurstIndex::new(0.75).unwrap();
        let table = KernelTable::new(h, 1.0).unwrap();
        let grid = TimeGrid::uniform(4, 1.0).unwrap();
        let fine = grid.refine(256);
        let op = VolterraOperator::new(&table, &fine, &grid).unwrap();
        let fam = StreamFamily::new(5);
        let n = 4000;
        let vb: Vec<f64> = (0..n as u64)
            .into_par_iter()
            .map(|i| op.apply(&wiener_path(&fine, 1, &fam, i)).unwrap().terminal()[0])
            .collect();
        let exact = sample_fbm_cholesky(h, &grid, 1, n, &fam.fork(1)).unwrap();
        let cb: Vec<f64> = exact.iter().map(|p| p.terminal()[0]).collect();
        assert!(ks_two_sample(&vb, &cb).passes(0.01));
    }
}
