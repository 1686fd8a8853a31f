use super::VectorFieldSet;
use crate::error::{LabError, Result};
use crate::quadrature::{gauss_on, legendre_rule};

/// Step of the RK4 flow integration in the `x` variable.
pub const FLOW_STEP: f64 = 1e-3;

fn rk4_step(v1: &impl Fn(f64) -> f64, y: f64, h: f64) -> f64 {
    let k1 = v1(y);
    let k2 = v1(y + 0.5 * h * k1);
    let k3 = v1(y + 0.5 * h * k2);
    let k4 = v1(y + h * k3);
    y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

fn check_nonvanishing(v: f64, y: f64) -> Result<()> {
    if !(v.abs() > 1e-12) || !v.is_finite() {
        return Err(LabError::OdeFailure(format!("V_1 vanishes at {y}")));
    }
    Ok(())
}

/// `F(x, y)`: solution at "time" `x` of `∂_x F = V_1(F)`, `F(0, y) = y`.
pub fn doss_sussmann_flow(fields: &VectorFieldSet, x: f64, y: f64) -> Result<f64> {
    let v1 = |z: f64| fields.v1(z);
    let steps = (x.abs() / FLOW_STEP).ceil().max(1.0) as usize;
    let h = x / steps as f64;
    let mut f = y;
    for _ in 0..steps {
        check_nonvanishing(v1(f), f)?;
        f = rk4_step(&v1, f, h);
    }
    Ok(f)
}

/// `F^{-1}(x, a) = ∫_a^x dz / V_1(z)`, the `x`-time at which the flow from `a` reaches `x`.
pub fn flow_inverse(fields: &VectorFieldSet, x: f64, a: f64) -> Result<f64> {
    if x == a {
        return Ok(0.0);
    }
    let rule = legendre_rule(16);
    let panels = ((x - a).abs() / 0.25).ceil().max(1.0) as usize;
    let w = (x - a) / panels as f64;
    let sign = fields.v1(a).signum();
    let mut acc = 0.0;
    let mut bad = None;
    for p in 0..panels {
        let lo = a + p as f64 * w;
        acc += gauss_on(&rule, lo, lo + w, |z| {
            let v = fields.v1(z);
            if v.signum() != sign || v == 0.0 {
                bad = Some(z);
            }
            1.0 / v
        });
    }
    if let Some(z) = bad {
        return Err(LabError::Ellipticity(format!("V_1 changes sign near {z} on [{a}, {x}]")));
    }
    Ok(acc)
}

/// `F(·, y0)` tabulated by RK4 on `[-half_width, half_width]` and interpolated
/// by cubic Hermite polynomials with slopes `V_1(F)`.
#[derive(Debug, Clone)]
pub struct FlowMap {
    fields: VectorFieldSet,
    y0: f64,
    x_min: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl FlowMap {
    pub fn new(fields: &VectorFieldSet, y0: f64, half_width: f64) -> Result<Self> {
        let n = (half_width / FLOW_STEP).ceil() as usize;
        let step = half_width / n as f64;
        let v1 = |z: f64| fields.v1(z);
        let mut values = vec![0.0; 2 * n + 1];
        values[n] = y0;
        for k in 0..n {
            check_nonvanishing(v1(values[n + k]), values[n + k])?;
            values[n + k + 1] = rk4_step(&v1, values[n + k], step);
            check_nonvanishing(v1(values[n - k]), values[n - k])?;
            values[n - k - 1] = rk4_step(&v1, values[n - k], -step);
        }
        let slopes = values.iter().map(|&f| v1(f)).collect();
        Ok(Self {
            fields: fields.clone(),
            y0,
            x_min: -half_width,
            step,
            values,
            slopes,
        })
    }

    pub fn base_point(&self) -> f64 {
        self.y0
    }

    /// `F(x, y0)`.
    pub fn eval(&self, x: f64) -> f64 {
        let pos = (x - self.x_min) / self.step;
        let last = self.values.len() - 1;
        if pos < 0.0 || pos > last as f64 {
            // Outside the table: continue the ODE from the nearest end.
            let (x_end, f_end) = if pos < 0.0 {
                (self.x_min, self.values[0])
            } else {
                (self.x_min + last as f64 * self.step, self.values[last])
            };
            return doss_sussmann_flow(&self.fields, x - x_end, f_end).unwrap_or(f64::NAN);
        }
        let k = (pos.floor() as usize).min(last - 1);
        let s = pos - k as f64;
        let (p0, p1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * self.step, self.slopes[k + 1] * self.step);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * p1 + (s3 - s2) * m1
    }

    /// `F(x, y) = F(x + F^{-1}(y, y0), y0)` by the group property.
    pub fn eval_from(&self, x: f64, y: f64) -> f64 {
        if y == self.y0 {
            return self.eval(x);
        }
        match flow_inverse(&self.fields, y, self.y0) {
            Ok(shift) => self.eval(x + shift),
            Err(_) => f64::NAN,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{FieldKind, FieldParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_plus_sin() -> VectorFieldSet {
        VectorFieldSet::new(
            FieldKind::SinShift,
            1,
            FieldParams {
                base: 2.0,
                amp: 1.0,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn constant_field_is_translation() {
        let f = VectorFieldSet::new(
            FieldKind::Const,
            1,
            FieldParams {
                sigma: 0.7,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((doss_sussmann_flow(&f, 1.3, 0.2).unwrap() - (0.2 + 0.7 * 1.3)).abs() < 1e-14);
        assert!((flow_inverse(&f, 1.5, 0.1).unwrap() - 1.4 / 0.7).abs() < 1e-14);
        assert_eq!(flow_inverse(&f, 0.4, 0.4).unwrap(), 0.0);
        let map = FlowMap::new(&f, 0.2, 3.0).unwrap();
        assert_eq!(map.eval(0.0), 0.2);
    }

    #[test]
    fn residual_group_property_and_inverse() {
        let f = two_plus_sin();
        let map = FlowMap::new(&f, 0.3, 4.0).unwrap();
        for i in -35..=35 {
            let x = i as f64 * 0.1;
            let h = 1e-5;
            let deriv = (map.eval(x + h) - map.eval(x - h)) / (2.0 * h);
            assert!((deriv - f.v1(map.eval(x))).abs() < 1e-7, "residual at {x}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (x1, x2, y) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-2.0..2.0));
            let lhs = doss_sussmann_flow(&f, x1 + x2, y).unwrap();
            let rhs = doss_sussmann_flow(&f, x2, doss_sussmann_flow(&f, x1, y).unwrap()).unwrap();
            assert!((lhs - rhs).abs() < 1e-8);
            let (x, a) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let inv = flow_inverse(&f, x, a).unwrap();
            assert!((doss_sussmann_flow(&f, inv, a).unwrap() - x).abs() < 1e-8);
            let (lo, hi) = ((x - a).abs() / 3.0, (x - a).abs() / 1.0);
            assert!(inv.abs() >= lo - 1e-12 && inv.abs() <= hi + 1e-12);
            assert!((map.eval_from(x1, y) - doss_sussmann_flow(&f, x1, y).unwrap()).abs() < 1e-9);
        }
        // Outside the table the ODE is continued.
        assert!((map.eval(5.0) - doss_sussmann_flow(&f, 5.0, 0.3).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn sign_change_is_rejected() {
        let f = VectorFieldSet::new(FieldKind::Linear, 1, FieldParams::default()).unwrap();
        assert!(matches!(flow_inverse(&f, 1.0, -1.0), Err(LabError::Ellipticity(_))));
    }
}
