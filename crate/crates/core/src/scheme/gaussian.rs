use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{LabError, Result};
use crate::sde::VectorFieldSet;

/// `Σ = V(x)V(x)^* σ_n²`, with its eigenvalues checked against `[λσ_n², Λσ_n²]`.
pub fn conditional_cov(fields: &VectorFieldSet, x_state: &[f64], sigma_n_sq: f64) -> Result<DMatrix<f64>> {
    let (m, d) = (fields.m(), fields.d());
    if x_state.len() != m {
        return Err(LabError::GridMismatch(format!(
            "state has dimension {}, fields need {m}",
            x_state.len()
        )));
    }
    if !(fields.lambda() > 0.0) {
        return Err(LabError::Ellipticity("fields declare no positive ellipticity constant".into()));
    }
    let mut v = vec![0.0; m * d];
    fields.diffusion(x_state, &mut v);
    let vm = DMatrix::from_row_slice(m, d, &v);
    let cov = &vm * vm.transpose() * sigma_n_sq;
    let eig = SymmetricEigen::new(cov.clone()).eigenvalues;
    let tol = 1e-12 * fields.lambda_upper() * sigma_n_sq;
    let (lo, hi) = (fields.lambda() * sigma_n_sq - tol, fields.lambda_upper() * sigma_n_sq + tol);
    if let Some(bad) = eig.iter().find(|&&e| e < lo || e > hi) {
        return Err(LabError::Ellipticity(format!(
            "eigenvalue {bad} outside [{lo}, {hi}] at {x_state:?}"
        )));
    }
    Ok(cov)
}

/// Density at `x` of `N(f_prev, cov)`.
pub fn gaussian_main_term(x: &[f64], f_prev: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    let m = x.len();
    if f_prev.len() != m || cov.nrows() != m || cov.ncols() != m {
        return Err(LabError::GridMismatch("point, mean and covariance dimensions differ".into()));
    }
    let chol = Cholesky::new(cov.clone()).ok_or_else(|| LabError::Factorization("covariance is singular".into()))?;
    let diff = DVector::from_iterator(m, x.iter().zip(f_prev).map(|(a, b)| a - b));
    let z = chol
        .l()
        .solve_lower_triangular(&diff)
        .ok_or_else(|| LabError::Factorization("triangular solve failed".into()))?;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok((-0.5 * z.norm_squared() - 0.5 * log_det - 0.5 * m as f64 * (2.0 * PI).ln()).exp())
}

/// `(2π)^{-m/2}(Λσ_n²)^{-m/2} exp(−|x−f|²/(2λσ_n²))`, the lower bound valid
/// for any covariance sandwiched between `λσ_n²` and `Λσ_n²`.
pub fn gaussian_lower_bound(x: &[f64], f_prev: &[f64], lambda: f64, lambda_upper: f64, sigma_n_sq: f64) -> f64 {
    let m = x.len() as f64;
    let r2: f64 = x.iter().zip(f_prev).map(|(a, b)| (a - b) * (a - b)).sum();
    (2.0 * PI * lambda_upper * sigma_n_sq).powf(-0.5 * m) * (-r2 / (2.0 * lambda * sigma_n_sq)).exp()
}
