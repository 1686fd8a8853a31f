use std::io::Write;

use crate::error::{LabError, Result};
use crate::fbm::{HurstIndex, KernelTable, Regime, TimeGrid};

/// Times `0 = t_0 < … < t_n = t` carrying equal kernel energy `σ_n² = t^{2H}/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub times: Vec<f64>,
    pub sigma_n_sq: f64,
    pub h: HurstIndex,
    pub t: f64,
    /// `∫_{t_{i-1}}^{t_i} K²(t, u) du` per cell.
    pub cell_energies: Vec<f64>,
}

impl Partition {
    pub fn n(&self) -> usize {
        self.times.len() - 1
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::new(self.times.clone()).expect("partition times are increasing from 0")
    }

    pub fn mesh(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// `mesh · n^{1/(2H)}`, bounded in `n` for the equal-energy partition.
    pub fn scaled_mesh(&self) -> f64 {
        self.mesh() * (self.n() as f64).powf(1.0 / self.h.two_h())
    }

    /// Largest `|cell energy / σ_n² − 1|`.
    pub fn max_energy_error(&self) -> f64 {
        self.cell_energies
            .iter()
            .map(|e| (e / self.sigma_n_sq - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `i, t_i, cell_energy` (energy of the cell ending at `t_i`).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "t_i", "cell_energy"])?;
        for (i, t) in self.times.iter().enumerate() {
            let e = if i == 0 { 0.0 } else { self.cell_energies[i - 1] };
            w.write_record([i.to_string(), t.to_string(), e.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Solves `∫_{t_{i-1}}^{t_i} K²(t,u)du = t^{2H}/n` cell by cell with a
/// Newton iteration safeguarded by bisection; the energy is strictly
/// increasing in the right endpoint, so each root is unique.
pub fn build_partition(t: f64, n: usize, table: &KernelTable) -> Result<Partition> {
    let h = table.hurst();
    if n == 0 {
        return Err(LabError::Domain("partition needs n >= 1".into()));
    }
    if !(t > 0.0) || t > table.t_terminal() * (1.0 + 1e-12) {
        return Err(LabError::Domain(format!("t={t} outside (0, {}]", table.t_terminal())));
    }
    let target = t.powf(h.two_h()) / n as f64;
    let times: Vec<f64> = match h.regime() {
        Regime::Rough => return Err(LabError::Regime("the equal-energy partition is built for H >= 1/2".into())),
        Regime::Brownian => (0..=n).map(|i| if i == n { t } else { t * i as f64 / n as f64 }).collect(),
        Regime::Smooth => {
            let mut times = vec![0.0];
            for i in 1..n {
                let lo0 = times[i - 1];
                times.push(solve_cell(table, t, lo0, target, (t - lo0) / (n - i + 1) as f64)?);
            }
            times.push(t);
            times
        }
    };
    let cell_energies = times
        .windows(2)
        .map(|w| table.kernel_energy(t, w[0], w[1]))
        .collect::<Result<Vec<_>>>()?;
    Ok(Partition {
        times,
        sigma_n_sq: target,
        h,
        t,
        cell_energies,
    })
}

fn solve_cell(table: &KernelTable, t: f64, left: f64, target: f64, guess: f64) -> Result<f64> {
    let f = |x: f64| table.kernel_energy(t, left, x).map(|e| e - target);
    let (mut lo, mut hi) = (left, t);
    if f(hi)? < 0.0 {
        return Err(LabError::RootBracket(format!(
            "energy left on [{left}, {t}] is below the cell target {target}"
        )));
    }
    let mut x = left + guess;
    for _ in 0..200 {
        let fx = f(x)?;
        if fx.abs() <= 1e-14 * target {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * t {
            return Ok(0.5 * (lo + hi));
        }
        let k = table.k(t, x);
        let step = x - fx / (k * k);
        x = if step.is_finite() && step > lo && step < hi {
            step
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(LabError::RootBracket(format!("no convergence for the cell starting at {left}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_partitions() {
        let table = KernelTable::new(HurstIndex::new(0.75).unwrap(), 1.0).unwrap();
        let p = build_partition(1.0, 1, &table).unwrap();
        assert_eq!(p.times, vec![0.0, 1.0]);
        assert!(p.max_energy_error() < 1e-6);
        let bm = KernelTable::new(HurstIndex::new(0.5).unwrap(), 1.0).unwrap();
        let p = build_partition(1.0, 4, &bm).unwrap();
        assert_eq!(p.times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let rough = KernelTable::new(HurstIndex::new(0.3).unwrap(), 1.0).unwrap();
        assert!(matches!(build_partition(1.0, 4, &rough), Err(LabError::Regime(_))));
        assert!(build_partition(1.0, 0, &table).is_err());
    }

    #[test]
    fn equal_energies_and_bounded_mesh() {
        let table = KernelTable::new(HurstIndex::new(0.75).unwrap(), 1.0).unwrap();
        let mut scaled = Vec::new();
        for n in [4, 16, 64] {
            let p = build_partition(1.0, n, &table).unwrap();
            assert!(p.max_energy_error() < 1e-6, "n={n}: {}", p.max_energy_error());
            assert!(p.times.windows(2).all(|w| w[1] > w[0]));
            scaled.push(p.scaled_mesh());
        }
        let (lo, hi) = scaled.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi / lo <= 3.0, "{scaled:?}");
        // Deterministic.
        assert_eq!(build_partition(1.0, 16, &table).unwrap(), build_partition(1.0, 16, &table).unwrap());
        // A shorter horizon inside the table.
        let p = build_partition(0.5, 8, &table).unwrap();
        assert!(p.max_energy_error() < 1e-6 && p.times[8] == 0.5);
    }

    #[test]
    fn csv_export() {
        let table = KernelTable::new(HurstIndex::new(0.75).unwrap(), 1.0).unwrap();
        let p = build_partition(1.0, 3, &table).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("i,t_i,cell_energy\n0,0,0\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
