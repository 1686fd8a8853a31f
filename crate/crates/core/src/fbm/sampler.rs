use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use super::{covariance_matrix, HurstIndex, ProcessLabel, SamplePath, TimeGrid};
use crate::error::{LabError, Result};
use crate::rng::{fill_normal, StreamFamily};

/// Exact fBm sampler on an arbitrary grid via the Cholesky factor of the
/// covariance at the nonzero nodes.
#[derive(Debug, Clone)]
pub struct CholeskySampler {
    grid: TimeGrid,
    lower: DMatrix<f64>,
}

impl CholeskySampler {
    pub fn new(h: HurstIndex, grid: &TimeGrid) -> Result<Self> {
        let cov = covariance_matrix(grid, h);
        let chol = Cholesky::new(cov)
            .ok_or_else(|| LabError::Factorization(format!("covariance on {} nodes is not positive definite", grid.len())))?;
        Ok(Self {
            grid: grid.clone(),
            lower: chol.l(),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// One path of `d` independent coordinates from the given stream.
    pub fn sample_one(&self, d: usize, family: &StreamFamily, index: u64) -> SamplePath {
        let n = self.grid.len() - 1;
        let mut rng = family.stream(index);
        let mut path = SamplePath::zeros(self.grid.clone(), d, ProcessLabel::Fbm);
        let mut z = vec![0.0; n];
        for c in 0..d {
            fill_normal(&mut rng, &mut z);
            let x = &self.lower * DVector::from_column_slice(&z);
            for i in 0..n {
                path.at_mut(i + 1)[c] = x[i];
            }
        }
        path
    }

    pub fn sample(&self, d: usize, n_paths: usize, family: &StreamFamily) -> Vec<SamplePath> {
        (0..n_paths as u64).into_par_iter().map(|i| self.sample_one(d, family, i)).collect()
    }
}

/// `n_paths` exact fBm paths of dimension `d` on `grid`.
pub fn sample_fbm_cholesky(h: HurstIndex, grid: &TimeGrid, d: usize, n_paths: usize, family: &StreamFamily) -> Result<Vec<SamplePath>> {
    Ok(CholeskySampler::new(h, grid)?.sample(d, n_paths, family))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::cov_r;
    use crate::stats::{ks_normal, mean_se};

    #[test]
    fn variance_independence_and_determinism() {
        let h = HurstIndex::new(0.3).unwrap();
        let grid = TimeGrid::new(vec![0.0, 0.1, 0.35, 0.5, 0.9, 1.0]).unwrap();
        let fam = StreamFamily::new(11);
        let paths = sample_fbm_cholesky(h, &grid, 2, 10_000, &fam).unwrap();
        let again = sample_fbm_cholesky(h, &grid, 2, 10_000, &fam).unwrap();
        assert_eq!(paths, again);
        let b1: Vec<f64> = paths.iter().map(|p| p.terminal()[0]).collect();
        let var = crate::stats::variance(&b1);
        let se = crate::stats::variance_se(&b1);
        assert!((var - 1.0).abs() < 4.0 * se, "{var} ± {se}");
        assert!(ks_normal(&b1, 1.0).passes(0.01));
        let cross: Vec<f64> = paths.iter().map(|p| p.terminal()[0] * p.terminal()[1]).collect();
        let (m, se) = mean_se(&cross);
        assert!(m.abs() < 4.0 * se);
        // Sample covariance vs the exact matrix at every pair of nodes.
        for i in 1..grid.len() {
            for j in i..grid.len() {
                let prod: Vec<f64> = paths.iter().map(|p| p.at(i)[1] * p.at(j)[1]).collect();
                let (m, se) = mean_se(&prod);
                let exact = cov_r(grid.times()[i], grid.times()[j], h).unwrap();
                assert!((m - exact).abs() < 4.5 * se, "({i},{j}) {m} vs {exact}");
            }
        }
    }
}
