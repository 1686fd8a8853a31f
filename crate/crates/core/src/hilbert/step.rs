use std::io::{Read, Write};

use crate::error::{LabError, Result};

/// A right-continuous `R^d`-valued step function on `[0, τ]`.
///
/// Cell `j` is `[breakpoints[j], breakpoints[j+1])` with value `values[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    breakpoints: Vec<f64>,
    dim: usize,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<f64>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints[0] != 0.0 {
            return Err(LabError::Domain("step function needs breakpoints 0 = b_0 < … < b_k".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LabError::Ordering("breakpoints must increase strictly".into()));
        }
        if dim == 0 || values.len() != (breakpoints.len() - 1) * dim {
            return Err(LabError::GridMismatch(format!(
                "{} values for {} cells of dimension {dim}",
                values.len(),
                breakpoints.len() - 1
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Domain("step function values must be finite".into()));
        }
        Ok(Self { breakpoints, dim, values })
    }

    /// Scalar step function from cell values.
    pub fn scalar(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(breakpoints, 1, values)
    }

    pub fn constant(c: f64, tau: f64) -> Result<Self> {
        Self::scalar(vec![0.0, tau], vec![c])
    }

    /// `𝟙_{[0, t]} e_coord` in dimension `dim`.
    pub fn indicator(t: f64, dim: usize, coord: usize) -> Result<Self> {
        let mut values = vec![0.0; dim];
        values[coord] = 1.0;
        Self::new(vec![0.0, t], dim, values)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn support_end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn cell_value(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// Value at `t`, zero outside `[0, τ)`.
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        if t < 0.0 || t >= self.support_end() {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let j = self.breakpoints.partition_point(|&b| b <= t) - 1;
        out.copy_from_slice(self.cell_value(j));
    }

    /// Coordinatewise minimum over the support.
    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn linear_combination(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        if self.dim != other.dim {
            return Err(LabError::GridMismatch("dimension mismatch".into()));
        }
        let bps = union_breakpoints(&self.breakpoints, &other.breakpoints);
        let mut values = Vec::with_capacity((bps.len() - 1) * self.dim);
        let (mut u, mut v) = (vec![0.0; self.dim], vec![0.0; self.dim]);
        for w in bps.windows(2) {
            self.eval(w[0], &mut u);
            other.eval(w[0], &mut v);
            values.extend(u.iter().zip(&v).map(|(x, y)| alpha * x + beta * y));
        }
        Self::new(bps, self.dim, values)
    }

    /// Writes rows `(breakpoint, v_0, …)`; the last row carries `τ` and repeats the last cell.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["breakpoint".to_string()];
        header.extend((0..self.dim).map(|c| format!("v_{c}")));
        w.write_record(&header)?;
        for (j, b) in self.breakpoints.iter().enumerate() {
            let cell = j.min(self.cells() - 1);
            let mut rec = vec![format!("{b:e}")];
            rec.extend(self.cell_value(cell).iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let dim = r.headers()?.len().saturating_sub(1);
        let mut bps = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| LabError::Domain(format!("bad number {s:?}: {e}")))
            };
            bps.push(parse(&rec[0])?);
            rows.push(rec.iter().skip(1).map(parse).collect::<Result<_>>()?);
        }
        rows.pop();
        Self::new(bps, dim, rows.concat())
    }
}

/// Sorted union of two breakpoint lists, merging near-duplicates.
pub(crate) fn union_breakpoints(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for x in all {
        match out.last() {
            Some(&last) if (x - last).abs() <= 1e-14 * x.abs().max(1.0) => {}
            _ => out.push(x),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_eval() {
        let f = StepFunction::new(vec![0.0, 0.3, 1.0], 2, vec![1.0, -1.0, 2.5, 0.0]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = StepFunction::read_csv(buf.as_slice()).unwrap();
        assert_eq!(f, back);
        let mut v = [0.0; 2];
        f.eval(0.3, &mut v);
        assert_eq!(v, [2.5, 0.0]);
        f.eval(1.0, &mut v);
        assert_eq!(v, [0.0, 0.0]);
        assert!(StepFunction::scalar(vec![0.0, 0.5, 0.5], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn combination_on_union_grid() {
        let f = StepFunction::scalar(vec![0.0, 0.5], vec![2.0]).unwrap();
        let g = StepFunction::scalar(vec![0.0, 0.25, 1.0], vec![1.0, 3.0]).unwrap();
        let h = f.linear_combination(1.0, &g, -1.0).unwrap();
        assert_eq!(h.breakpoints(), &[0.0, 0.25, 0.5, 1.0]);
        assert_eq!(h.cell_value(1), &[-1.0]);
        assert_eq!(h.cell_value(2), &[-3.0]);
    }
}
