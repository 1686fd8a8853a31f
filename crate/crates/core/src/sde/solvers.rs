use serde::{Deserialize, Serialize};

use super::{FlowMap, VectorFieldSet};
use crate::error::{LabError, Result};
use crate::fbm::{HurstIndex, ProcessLabel, Regime, SamplePath, TimeGrid};

/// Paths leaving `|x| ≤ DIVERGENCE_CAP` are reported as diverged.
pub const DIVERGENCE_CAP: f64 = 1e6;

/// Which of the three solvable cases a problem falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    #[serde(rename = "additive-1d")]
    Additive1d,
    #[serde(rename = "multiplicative-1d")]
    Multiplicative1d,
    YoungMultid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeProblem {
    pub a: Vec<f64>,
    pub fields: VectorFieldSet,
    pub h: HurstIndex,
    pub mode: SolveMode,
}

impl SdeProblem {
    pub fn new(a: Vec<f64>, fields: VectorFieldSet, h: HurstIndex, mode: SolveMode) -> Result<Self> {
        if a.len() != fields.m() {
            return Err(LabError::Config(format!(
                "initial state has dimension {}, fields have {}",
                a.len(),
                fields.m()
            )));
        }
        match mode {
            SolveMode::Additive1d if fields.m() != 1 || !fields.is_additive() => {
                return Err(LabError::Config("additive-1d needs a one-dimensional additive field".into()))
            }
            SolveMode::Multiplicative1d if fields.m() != 1 => return Err(LabError::Config("multiplicative-1d needs m = d = 1".into())),
            SolveMode::YoungMultid if h.regime() != Regime::Smooth => return Err(LabError::Regime("young-multid needs H > 1/2".into())),
            _ => {}
        }
        Ok(Self { a, fields, h, mode })
    }
}

fn guard(x: &[f64], t: f64) -> Result<()> {
    if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_CAP) {
        return Err(LabError::Divergence(format!("|X| exceeded {DIVERGENCE_CAP:e} at t = {t}")));
    }
    Ok(())
}

/// First-order Young scheme `X_{k+1} = X_k + V_0(X_k)Δt + Σ_j V_j(X_k)ΔB^j`
/// on the driver grid, recorded on `out_grid`.
pub fn solve_young_euler(problem: &SdeProblem, driver: &SamplePath, out_grid: &TimeGrid) -> Result<SamplePath> {
    if problem.h.regime() != Regime::Smooth {
        return Err(LabError::Regime(format!("Young-Euler needs H > 1/2, got {}", problem.h.value())));
    }
    let full = young_euler_full(&problem.fields, &problem.a, driver)?;
    full.restrict(out_grid)
}

/// The Young-Euler solution at every node of the driver grid.
pub fn young_euler_full(fields: &VectorFieldSet, a: &[f64], driver: &SamplePath) -> Result<SamplePath> {
    let m = fields.m();
    let d = fields.d();
    if driver.dim() != d {
        return Err(LabError::GridMismatch(format!(
            "driver has dimension {}, fields need {d}",
            driver.dim()
        )));
    }
    let times = driver.grid().times();
    let mut out = SamplePath::zeros(driver.grid().clone(), m, ProcessLabel::Solution);
    out.at_mut(0).copy_from_slice(a);
    let mut x = a.to_vec();
    let mut v = vec![0.0; m * d];
    let mut v0 = vec![0.0; m];
    for k in 0..times.len() - 1 {
        let dt = times[k + 1] - times[k];
        fields.drift(&x, &mut v0);
        fields.diffusion(&x, &mut v);
        let (b0, b1) = (driver.at(k), driver.at(k + 1));
        for i in 0..m {
            let mut inc = v0[i] * dt;
            for j in 0..d {
                inc += v[i * d + j] * (b1[j] - b0[j]);
            }
            x[i] += inc;
        }
        guard(&x, times[k + 1])?;
        out.at_mut(k + 1).copy_from_slice(&x);
    }
    Ok(out)
}

/// Integrates `z' = f(t, z)` over the grid of `b` by classical RK4, with the
/// driver linearly interpolated inside each cell.
fn rk4_driven<F: Fn(f64, f64) -> f64>(z0: f64, b: &SamplePath, f: F) -> Result<Vec<f64>> {
    let times = b.grid().times();
    let mut z = vec![z0; times.len()];
    for k in 0..times.len() - 1 {
        let (t0, t1) = (times[k], times[k + 1]);
        let (b0, b1) = (b.at(k)[0], b.at(k + 1)[0]);
        let dt = t1 - t0;
        let bm = 0.5 * (b0 + b1);
        let zk = z[k];
        let k1 = f(b0, zk);
        let k2 = f(bm, zk + 0.5 * dt * k1);
        let k3 = f(bm, zk + 0.5 * dt * k2);
        let k4 = f(b1, zk + dt * k3);
        let next = zk + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !next.is_finite() {
            return Err(LabError::OdeFailure(format!("non-finite state at t = {t1}")));
        }
        z[k + 1] = next;
    }
    Ok(z)
}

/// `X = Z + σB` with `Z' = V_0(Z + σB)`, `Z_0 = a`; any `H`.
pub fn solve_additive_ode<F: Fn(f64) -> f64>(a: f64, v0: F, sigma: f64, b: &SamplePath) -> Result<SamplePath> {
    if b.dim() != 1 {
        return Err(LabError::GridMismatch("additive solver is one-dimensional".into()));
    }
    let z = rk4_driven(a, b, |bt, z| v0(z + sigma * bt))?;
    let vals: Vec<f64> = z.iter().enumerate().map(|(k, z)| z + sigma * b.at(k)[0]).collect();
    SamplePath::new(b.grid().clone(), 1, vals, ProcessLabel::Solution)
}

/// `X_t = F(B_t, Z_t)` with `Z' = V_0(X)·V_1(Z)/V_1(X)`, `Z_0 = a`, where
/// `F` is the flow of `V_1`; any `H`.
pub fn solve_doss_sussmann(fields: &VectorFieldSet, a: f64, flow: &FlowMap, b: &SamplePath) -> Result<SamplePath> {
    if fields.m() != 1 || b.dim() != 1 {
        return Err(LabError::GridMismatch("Doss–Sussmann solver is one-dimensional".into()));
    }
    let drift_free = fields.params().drift == 0.0;
    let z = if drift_free {
        vec![a; b.len()]
    } else {
        rk4_driven(a, b, |bt, z| {
            let x = flow.eval_from(bt, z);
            fields.v0(x) * fields.v1(z) / fields.v1(x)
        })?
    };
    let mut vals = Vec::with_capacity(b.len());
    for (k, zk) in z.iter().enumerate() {
        let x = flow.eval_from(b.at(k)[0], *zk);
        guard(&[x], b.grid().times()[k])?;
        vals.push(x);
    }
    SamplePath::new(b.grid().clone(), 1, vals, ProcessLabel::Solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::sample_fbm_cholesky;
    use crate::rng::StreamFamily;
    use crate::sde::{FieldKind, FieldParams};

    fn hh(v: f64) -> HurstIndex {
        HurstIndex::new(v).unwrap()
    }

    #[test]
    fn constant_fields_are_exact() {
        let grid = TimeGrid::uniform(64, 1.0).unwrap();
        let b = sample_fbm_cholesky(hh(0.7), &grid, 2, 1, &StreamFamily::new(1)).unwrap().remove(0);
        let f = VectorFieldSet::new(
            FieldKind::Const,
            2,
            FieldParams {
                sigma: 0.5,
                drift: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        let prob = SdeProblem::new(vec![1.0, -1.0], f, hh(0.7), SolveMode::YoungMultid).unwrap();
        let x = solve_young_euler(&prob, &b, &grid).unwrap();
        for k in 0..grid.len() {
            assert!((x.at(k)[0] - (1.0 + 0.5 * b.at(k)[0])).abs() < 1e-15);
            assert!((x.at(k)[1] - (-1.0 + 0.5 * b.at(k)[1])).abs() < 1e-15);
        }
        let zero = SamplePath::zeros(grid.clone(), 1, ProcessLabel::Fbm);
        let f1 = VectorFieldSet::new(
            FieldKind::Arctan,
            1,
            FieldParams {
                sigma: 1.0,
                drift: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
        let p1 = SdeProblem::new(vec![0.3], f1.clone(), hh(0.7), SolveMode::YoungMultid).unwrap();
        let xe = solve_young_euler(&p1, &zero, &grid).unwrap();
        // Zero driver: Euler on the drift ODE x' = 0.5 atan(x).
        let mut x = 0.3;
        for k in 0..64 {
            x += 0.5 * f64::atan(x) / 64.0;
            assert!((xe.at(k + 1)[0] - x).abs() < 1e-14);
        }
        assert!(solve_young_euler(&SdeProblem { h: hh(0.3), ..p1 }, &zero, &grid).is_err());
    }

    #[test]
    fn additive_ode_exact_cases() {
        let grid = TimeGrid::uniform(100, 1.0).unwrap();
        let b = sample_fbm_cholesky(hh(0.3), &grid, 1, 1, &StreamFamily::new(2)).unwrap().remove(0);
        let x = solve_additive_ode(0.4, |_| 0.0, 1.5, &b).unwrap();
        for k in 0..grid.len() {
            assert_eq!(x.at(k)[0], 0.4 + 1.5 * b.at(k)[0]);
        }
        let x = solve_additive_ode(0.4, |_| -2.0, 1.5, &b).unwrap();
        for (k, t) in grid.times().iter().enumerate() {
            assert!((x.at(k)[0] - (0.4 - 2.0 * t + 1.5 * b.at(k)[0])).abs() < 1e-13);
        }
    }

    #[test]
    fn linear_field_approaches_exponential() {
        // X = a exp(B) for V_1(x) = x; error shrinks under refinement.
        let f = VectorFieldSet::new(FieldKind::Linear, 1, FieldParams::default()).unwrap();
        let coarse = TimeGrid::uniform(64, 1.0).unwrap();
        let fine = coarse.refine(16);
        let fam = StreamFamily::new(3);
        let mut errs = [0.0f64; 2];
        for i in 0..20 {
            let b = crate::fbm::CholeskySampler::new(hh(0.75), &fine).unwrap().sample_one(1, &fam, i);
            for (slot, grid) in [&coarse, &fine].into_iter().enumerate() {
                let bb = b.restrict(grid).unwrap();
                let x = young_euler_full(&f, &[1.0], &bb).unwrap();
                let exact = bb.terminal()[0].exp();
                errs[slot] = errs[slot].max((x.terminal()[0] - exact).abs());
            }
        }
        assert!(errs[1] < 0.5 * errs[0], "{errs:?}");
    }

    #[test]
    fn additive_matches_young_for_smooth_noise() {
        let f = VectorFieldSet::new(
            FieldKind::SinShift,
            1,
            FieldParams {
                base: 1.0,
                amp: 0.0,
                drift: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        let fam = StreamFamily::new(4);
        let mut prev = f64::INFINITY;
        for n in [64, 256, 1024] {
            let grid = TimeGrid::uniform(n, 1.0).unwrap();
            let mut worst = 0.0f64;
            for i in 0..10 {
                let b = crate::fbm::CholeskySampler::new(hh(0.75), &grid).unwrap().sample_one(1, &fam, i);
                let xo = solve_additive_ode(0.2, |x| x.sin(), 1.0, &b).unwrap();
                let xy = young_euler_full(&f, &[0.2], &b).unwrap();
                for k in 0..grid.len() {
                    worst = worst.max((xo.at(k)[0] - xy.at(k)[0]).abs());
                }
            }
            assert!(worst < prev);
            prev = worst;
        }
        assert!(prev < 5e-3);
    }
}
