use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Registered vector-field families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// `V_j = σ e_j`, `V_0 = drift·1`.
    Const,
    /// `V_j^j(x) = base + amp·sin(x_{j+1 mod m} + shift)`, `V_0^i = drift·sin(x_i + shift)`.
    SinShift,
    /// `V_j^j(x) = base + amp·tanh((Ax)_j)`, `V_0 = -drift·tanh(x)`.
    TanhNet,
    /// One-dimensional additive: `V_1 = σ`, `V_0 = drift·arctan(x)`.
    Arctan,
    /// One-dimensional `V_1(x) = x`, `V_0(x) = drift·x`; not elliptic.
    Linear,
}

impl FieldKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "const" => Ok(Self::Const),
            "sin_shift" => Ok(Self::SinShift),
            "tanh_net" => Ok(Self::TanhNet),
            "arctan" => Ok(Self::Arctan),
            "linear" => Ok(Self::Linear),
            other => Err(LabError::Config(format!("unknown vector field {other:?}"))),
        }
    }
}

/// Field parameters as they appear in the config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldParams {
    pub sigma: f64,
    pub base: f64,
    pub amp: f64,
    pub shift: f64,
    pub drift: f64,
}

impl Default for FieldParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            base: 2.0,
            amp: 1.0,
            shift: 0.0,
            drift: 0.0,
        }
    }
}

/// `V_0, …, V_d` with Jacobians and declared ellipticity constants.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldSet {
    kind: FieldKind,
    m: usize,
    params: FieldParams,
    lambda: f64,
    lambda_upper: f64,
    v0_deriv_bound: f64,
}

impl VectorFieldSet {
    pub fn new(kind: FieldKind, m: usize, params: FieldParams) -> Result<Self> {
        if m == 0 {
            return Err(LabError::Config("state dimension must be positive".into()));
        }
        let p = params;
        let (lambda, lambda_upper, mbound) = match kind {
            FieldKind::Const => (p.sigma * p.sigma, p.sigma * p.sigma, 0.0),
            FieldKind::SinShift | FieldKind::TanhNet => {
                if !(p.base > p.amp.abs()) {
                    return Err(LabError::Ellipticity(format!("base {} must exceed |amp| {}", p.base, p.amp)));
                }
                ((p.base - p.amp.abs()).powi(2), (p.base + p.amp.abs()).powi(2), p.drift.abs())
            }
            FieldKind::Arctan | FieldKind::Linear => {
                if m != 1 {
                    return Err(LabError::Config(format!("{kind:?} fields are one-dimensional")));
                }
                if kind == FieldKind::Arctan {
                    (p.sigma * p.sigma, p.sigma * p.sigma, p.drift.abs())
                } else {
                    (0.0, f64::INFINITY, p.drift.abs())
                }
            }
        };
        if kind == FieldKind::Const || kind == FieldKind::Arctan {
            if p.sigma == 0.0 {
                return Err(LabError::Ellipticity("σ must be nonzero".into()));
            }
        }
        Ok(Self {
            kind,
            m,
            params,
            lambda,
            lambda_upper,
            v0_deriv_bound: mbound,
        })
    }

    pub fn from_name(name: &str, m: usize, params: FieldParams) -> Result<Self> {
        Self::new(FieldKind::parse(name)?, m, params)
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn params(&self) -> &FieldParams {
        &self.params
    }

    /// State dimension `m`.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Noise dimension `d` (equal to `m` for every registered family).
    pub fn d(&self) -> usize {
        self.m
    }

    /// Lower ellipticity constant `λ`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Upper ellipticity constant `Λ`.
    pub fn lambda_upper(&self) -> f64 {
        self.lambda_upper
    }

    /// Bound `M` on the operator norm of `V_0'`.
    pub fn v0_deriv_bound(&self) -> f64 {
        self.v0_deriv_bound
    }

    /// True when the diffusion fields do not depend on the state.
    pub fn is_additive(&self) -> bool {
        matches!(self.kind, FieldKind::Const | FieldKind::Arctan)
    }

    fn mix(&self, x: &[f64], j: usize) -> f64 {
        // (A x)_j with A = 0.5 I + S, S the cyclic shift minus its transpose.
        let m = self.m;
        let mut v = 0.5 * x[j];
        if m == 2 {
            v += if j == 0 { x[1] } else { -x[0] };
        } else if m > 2 {
            v += x[(j + 1) % m] - x[(j + m - 1) % m];
        }
        v
    }

    fn mix_row(&self, j: usize, out: &mut [f64]) {
        let m = self.m;
        out.iter_mut().for_each(|v| *v = 0.0);
        out[j] = 0.5;
        if m == 2 {
            out[1 - j] = if j == 0 { 1.0 } else { -1.0 };
        } else if m > 2 {
            out[(j + 1) % m] += 1.0;
            out[(j + m - 1) % m] -= 1.0;
        }
    }

    /// `V_0(x)`.
    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        let p = &self.params;
        for i in 0..self.m {
            out[i] = match self.kind {
                FieldKind::Const => p.drift,
                FieldKind::SinShift => p.drift * (x[i] + p.shift).sin(),
                FieldKind::TanhNet => -p.drift * x[i].tanh(),
                FieldKind::Arctan => p.drift * x[i].atan(),
                FieldKind::Linear => p.drift * x[i],
            };
        }
    }

    /// Jacobian of `V_0`, row-major `m × m`.
    pub fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        let p = &self.params;
        let m = self.m;
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            out[i * m + i] = match self.kind {
                FieldKind::Const => 0.0,
                FieldKind::SinShift => p.drift * (x[i] + p.shift).cos(),
                FieldKind::TanhNet => -p.drift / x[i].cosh().powi(2),
                FieldKind::Arctan => p.drift / (1.0 + x[i] * x[i]),
                FieldKind::Linear => p.drift,
            };
        }
    }

    /// Diagonal entry `V_j^j(x)`; every registered family has diagonal diffusion.
    fn diag(&self, x: &[f64], j: usize) -> f64 {
        let p = &self.params;
        match self.kind {
            FieldKind::Const | FieldKind::Arctan => p.sigma,
            FieldKind::SinShift => p.base + p.amp * (x[(j + 1) % self.m] + p.shift).sin(),
            FieldKind::TanhNet => p.base + p.amp * self.mix(x, j).tanh(),
            FieldKind::Linear => x[0],
        }
    }

    /// The `m × d` matrix `V(x) = (V_1(x), …, V_d(x))`, row-major.
    pub fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        let m = self.m;
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..m {
            out[j * m + j] = self.diag(x, j);
        }
    }

    /// Jacobian of the field `V_j` (0-based `j`), row-major `m × m`.
    pub fn diffusion_jacobian(&self, x: &[f64], j: usize, out: &mut [f64]) {
        let p = &self.params;
        let m = self.m;
        out.iter_mut().for_each(|v| *v = 0.0);
        match self.kind {
            FieldKind::Const | FieldKind::Arctan => {}
            FieldKind::SinShift => {
                let k = (j + 1) % m;
                out[j * m + k] = p.amp * (x[k] + p.shift).cos();
            }
            FieldKind::TanhNet => {
                let sech2 = 1.0 / self.mix(x, j).cosh().powi(2);
                let mut row = vec![0.0; m];
                self.mix_row(j, &mut row);
                for k in 0..m {
                    out[j * m + k] = p.amp * sech2 * row[k];
                }
            }
            FieldKind::Linear => out[0] = 1.0,
        }
    }

    /// Scalar `V_1` for one-dimensional problems.
    pub fn v1(&self, x: f64) -> f64 {
        self.diag(&[x], 0)
    }

    pub fn v1_prime(&self, x: f64) -> f64 {
        let mut out = [0.0];
        self.diffusion_jacobian(&[x], 0, &mut out);
        out[0]
    }

    pub fn v0(&self, x: f64) -> f64 {
        let mut out = [0.0];
        self.drift(&[x], &mut out);
        out[0]
    }

    pub fn v0_prime(&self, x: f64) -> f64 {
        let mut out = [0.0];
        self.drift_jacobian(&[x], &mut out);
        out[0]
    }

    /// Extreme eigenvalues of `V(x)V(x)ᵀ`.
    pub fn ellipticity_at(&self, x: &[f64]) -> (f64, f64) {
        let m = self.m;
        let mut v = vec![0.0; m * m];
        self.diffusion(x, &mut v);
        let vm = DMatrix::from_row_slice(m, m, &v);
        let eig = SymmetricEigen::new(&vm * vm.transpose()).eigenvalues;
        (eig.min(), eig.max())
    }

    /// Checks the declared constants at the given states.
    pub fn check_states<'a, I: IntoIterator<Item = &'a [f64]>>(&self, states: I, tol: f64) -> Result<()> {
        let m = self.m;
        let mut jac = vec![0.0; m * m];
        for x in states {
            let (lo, hi) = self.ellipticity_at(x);
            if lo < self.lambda - tol || hi > self.lambda_upper + tol {
                return Err(LabError::Ellipticity(format!(
                    "eigenvalues [{lo}, {hi}] outside [{}, {}] at {x:?}",
                    self.lambda, self.lambda_upper
                )));
            }
            self.drift_jacobian(x, &mut jac);
            let norm = DMatrix::from_row_slice(m, m, &jac).singular_values().max();
            if norm > self.v0_deriv_bound + tol {
                return Err(LabError::Ellipticity(format!("‖V_0'‖ = {norm} exceeds {}", self.v0_deriv_bound)));
            }
        }
        Ok(())
    }
}
