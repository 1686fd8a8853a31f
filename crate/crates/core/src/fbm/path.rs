use std::io::Write;

use serde::{Deserialize, Serialize};

use super::TimeGrid;
use crate::error::{LabError, Result};

/// Which process a path carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProcessLabel {
    Wiener,
    Fbm,
    Solution,
    Derivative,
}

/// Values of a `d`-dimensional process on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: TimeGrid,
    dim: usize,
    /// Row-major: node `i`, coordinate `c` at `i * dim + c`.
    values: Vec<f64>,
    label: ProcessLabel,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>, label: ProcessLabel) -> Result<Self> {
        if dim == 0 || values.len() != grid.len() * dim {
            return Err(LabError::GridMismatch(format!(
                "{} values for {} nodes of dimension {dim}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, dim, values, label })
    }

    pub fn zeros(grid: TimeGrid, dim: usize, label: ProcessLabel) -> Self {
        let values = vec![0.0; grid.len() * dim];
        Self { grid, dim, values, label }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> ProcessLabel {
        self.label
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    #[inline]
    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }

    #[inline]
    pub fn at_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.values[node * self.dim..(node + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.at(self.len() - 1)
    }

    /// One coordinate as a time series.
    pub fn coord(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.values[i * self.dim + c]).collect()
    }

    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    /// The path restricted to the nodes of a coarser grid.
    pub fn restrict(&self, coarse: &TimeGrid) -> Result<Self> {
        let idx = self.grid.embedding_of(coarse)?;
        let mut values = Vec::with_capacity(idx.len() * self.dim);
        for i in idx {
            values.extend_from_slice(self.at(i));
        }
        Self::new(coarse.clone(), self.dim, values, self.label)
    }

    /// Linear interpolation of all coordinates at time `t`.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let times = self.grid.times();
        let i = self.grid.cell_of(t);
        let (a, b) = (times[i], times[i + 1]);
        let w = ((t - a) / (b - a)).clamp(0.0, 1.0);
        for c in 0..self.dim {
            let lo = self.values[i * self.dim + c];
            let hi = self.values[(i + 1) * self.dim + c];
            out[c] = lo + w * (hi - lo);
        }
    }
}

/// Writes paths as CSV with columns `path_id, time, coord_0, …`.
pub fn write_paths_csv<W: Write>(paths: &[SamplePath], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dim = paths.first().map_or(1, |p| p.dim());
    let mut header = vec!["path_id".to_string(), "time".to_string()];
    header.extend((0..dim).map(|c| format!("coord_{c}")));
    w.write_record(&header)?;
    for (id, p) in paths.iter().enumerate() {
        if p.dim() != dim {
            return Err(LabError::GridMismatch("paths of different dimension".into()));
        }
        for (i, t) in p.grid().times().iter().enumerate() {
            let mut rec = vec![id.to_string(), format!("{t:e}")];
            rec.extend(p.at(i).iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
