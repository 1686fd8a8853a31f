use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::Partition;
use crate::error::{LabError, Result};
use crate::fbm::{wiener_path, KernelTable, SamplePath, TimeGrid, VolterraOperator};
use crate::rng::StreamFamily;
use crate::sde::{young_euler_full, VectorFieldSet};

/// Per-cell terms of `F_i = F_{i-1} + I_i + R_i`, each an `m`-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerSplit {
    pub f: Vec<Vec<f64>>,
    pub i_terms: Vec<Vec<f64>>,
    pub r_terms: Vec<Vec<f64>>,
    /// `∫_{t_{i-1}}^{t_i} Q_s dW_s`, the remainder restricted to the current cell.
    pub q_terms: Vec<Vec<f64>>,
    pub x_terminal: Vec<f64>,
    pub a: Vec<f64>,
}

impl EulerSplit {
    /// `max_c |Σ_i (I_i + R_i) − (X_t − a)|`.
    pub fn telescoping_error(&self) -> f64 {
        (0..self.a.len())
            .map(|c| {
                let sum: f64 = self.i_terms.iter().zip(&self.r_terms).map(|(i, r)| i[c] + r[c]).sum();
                (sum - (self.x_terminal[c] - self.a[c])).abs()
            })
            .fold(0.0, f64::max)
    }

    /// CSV rows `path_id, i, F_*, I_*, R_*` for cells `i = 1..n`.
    pub fn write_csv<W: Write>(splits: &[EulerSplit], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let m = splits.first().map_or(0, |s| s.a.len());
        let mut header = vec!["path_id".to_string(), "i".to_string()];
        for name in ["F", "I", "R"] {
            header.extend((0..m).map(|c| format!("{name}_{c}")));
        }
        w.write_record(&header)?;
        for (p, s) in splits.iter().enumerate() {
            for i in 0..s.i_terms.len() {
                let mut row = vec![p.to_string(), (i + 1).to_string()];
                for part in [&s.f[i + 1], &s.i_terms[i], &s.r_terms[i]] {
                    row.extend(part.iter().map(|v| v.to_string()));
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Kernel weights for splitting solutions simulated on a refinement of a partition.
#[derive(Debug, Clone)]
pub struct EulerSplitter {
    partition: Partition,
    fine: TimeGrid,
    /// Fine-grid index of each partition time.
    nodes: Vec<usize>,
    volterra: VolterraOperator,
}

impl EulerSplitter {
    /// `refine` fine cells per partition cell; `W` and `B` live on the fine grid.
    pub fn new(table: &KernelTable, partition: &Partition, refine: usize) -> Result<Self> {
        if (partition.t - table.t_terminal()).abs() > 1e-12 {
            return Err(LabError::GridMismatch("partition horizon differs from the kernel horizon".into()));
        }
        let fine = partition.grid().refine(refine.max(1));
        let nodes = fine.embedding_of(&partition.grid())?;
        let volterra = VolterraOperator::new(table, &fine, &fine)?;
        Ok(Self {
            partition: partition.clone(),
            fine,
            nodes,
            volterra,
        })
    }

    pub fn fine_grid(&self) -> &TimeGrid {
        &self.fine
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// `B = Σ K ΔW` and the Young-Euler solution on the fine grid.
    pub fn solve(&self, w: &SamplePath, fields: &VectorFieldSet, a: &[f64]) -> Result<(SamplePath, SamplePath)> {
        let b = self.volterra.apply(w)?;
        let x = young_euler_full(fields, a, &b)?;
        Ok((b, x))
    }

    /// Splits the solution driven by `w`. With `c = V(X_{t_{i-1}})`,
    /// `I_i = c ∫_{t_{i-1}}^{t_i} K(t,s)dW_s` and, from the frozen-field form
    /// `F_i = X_{t_i} + V(X_{t_i}) G_i`, `G_i = ∫_0^{t_i}(K(t,s) − K(t_i,s))dW_s`,
    /// `R_i = Σ_{cell}(V(X_u) − c)ΔB_u + (V(X_{t_i}) − c)G_i + Σ_{cell} V_0(X_u)Δu`,
    /// which is `F_i − F_{i-1} − I_i` with the field differences factored out.
    pub fn split(&self, w: &SamplePath, fields: &VectorFieldSet, a: &[f64]) -> Result<EulerSplit> {
        if w.grid() != &self.fine {
            return Err(LabError::GridMismatch("Wiener path is not on the splitter's fine grid".into()));
        }
        let (m, d) = (fields.m(), fields.d());
        if w.dim() != d || a.len() != m {
            return Err(LabError::GridMismatch("dimensions of W, a and the fields disagree".into()));
        }
        let (b, x) = self.solve(w, fields, a)?;
        let times = self.fine.times();
        let nf = self.fine.cells();
        let dw: Vec<Vec<f64>> = (0..nf).map(|j| (0..d).map(|k| w.at(j + 1)[k] - w.at(j)[k]).collect()).collect();
        let kt = self.volterra.row(nf);
        let n = self.partition.n();
        let mut vmat = vec![0.0; m * d];
        let mut field_at = |node: usize| {
            fields.diffusion(x.at(node), &mut vmat);
            vmat.clone()
        };
        let mut drift = vec![0.0; m];
        let mut f = vec![a.to_vec()];
        let (mut i_terms, mut r_terms, mut q_terms) = (Vec::new(), Vec::new(), Vec::new());
        for i in 1..=n {
            let (lo, hi) = (self.nodes[i - 1], self.nodes[i]);
            let c = field_at(lo);
            let vi = field_at(hi);
            let kti = self.volterra.row(hi);
            let mut j_int = vec![0.0; d];
            let mut g = vec![0.0; d];
            for j in 0..hi {
                for k in 0..d {
                    g[k] += (kt[j] - kti[j]) * dw[j][k];
                    if j >= lo {
                        j_int[k] += kt[j] * dw[j][k];
                    }
                }
            }
            let mut i_term = vec![0.0; m];
            let mut r_term = vec![0.0; m];
            let mut q_term = vec![0.0; m];
            for r in 0..m {
                for k in 0..d {
                    i_term[r] += c[r * d + k] * j_int[k];
                    r_term[r] += (vi[r * d + k] - c[r * d + k]) * g[k];
                }
            }
            // Q restricted to the cell: Σ_j ΔW_j [Σ_{l>j} (V(X_{u_{l-1}}) − c)ΔK_l(m_j) + (K(t,m_j) − K(t_i,m_j))(V(X_{t_i}) − c)].
            let mut qk = vec![0.0; d * m];
            for l in lo + 1..=hi {
                let vl = field_at(l - 1);
                fields.drift(x.at(l - 1), &mut drift);
                let db: Vec<f64> = (0..d).map(|k| b.at(l)[k] - b.at(l - 1)[k]).collect();
                for r in 0..m {
                    r_term[r] += drift[r] * (times[l] - times[l - 1]);
                    for k in 0..d {
                        r_term[r] += (vl[r * d + k] - c[r * d + k]) * db[k];
                    }
                }
                let row_l = self.volterra.row(l);
                let row_prev = self.volterra.row(l - 1);
                for j in lo..l {
                    let dk = row_l[j] - row_prev.get(j).copied().unwrap_or(0.0);
                    for k in 0..d {
                        for r in 0..m {
                            qk[k * m + r] = (vl[r * d + k] - c[r * d + k]) * dk;
                        }
                        for r in 0..m {
                            q_term[r] += qk[k * m + r] * dw[j][k];
                        }
                    }
                }
            }
            for j in lo..hi {
                for k in 0..d {
                    for r in 0..m {
                        q_term[r] += (kt[j] - kti[j]) * (vi[r * d + k] - c[r * d + k]) * dw[j][k];
                    }
                }
            }
            let prev = f.last().unwrap();
            let next: Vec<f64> = (0..m).map(|r| prev[r] + i_term[r] + r_term[r]).collect();
            f.push(next);
            i_terms.push(i_term);
            r_terms.push(r_term);
            q_terms.push(q_term);
        }
        Ok(EulerSplit {
            f,
            i_terms,
            r_terms,
            q_terms,
            x_terminal: x.terminal().to_vec(),
            a: a.to_vec(),
        })
    }
}

/// `Σ_i E|R_i|² / Σ_i E|I_i|²` and the same ratio for the cell-restricted remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemainderRatio {
    pub n: usize,
    pub ratio: f64,
    pub cell_ratio: f64,
    pub max_telescoping_error: f64,
}

pub fn remainder_ratio(
    splitter: &EulerSplitter,
    fields: &VectorFieldSet,
    a: &[f64],
    family: &StreamFamily,
    n_paths: usize,
) -> Result<RemainderRatio> {
    let sums = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let w = wiener_path(splitter.fine_grid(), fields.d(), family, p);
            let s = splitter.split(&w, fields, a)?;
            let sq = |v: &Vec<Vec<f64>>| v.iter().flatten().map(|x| x * x).sum::<f64>();
            Ok([sq(&s.r_terms), sq(&s.i_terms), sq(&s.q_terms), s.telescoping_error()])
        })
        .collect::<Result<Vec<_>>>()?;
    let tot = |k: usize| sums.iter().map(|s| s[k]).sum::<f64>();
    Ok(RemainderRatio {
        n: splitter.partition().n(),
        ratio: tot(0) / tot(1),
        cell_ratio: tot(2) / tot(1),
        max_telescoping_error: sums.iter().map(|s| s[3]).fold(0.0, f64::max),
    })
}
