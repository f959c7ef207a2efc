use nalgebra::{Matrix2, Vector2};

use super::{discrete_rotation, discrete_rotation_derivative, PlantModel, CHART_GUARD};
use crate::error::{Error, Result};
use crate::liegroup::{GroupElement, GroupId};
use crate::multiplex::ControlBox;

/// Planar underwater vehicle with heading `R`, angular momentum `M`,
/// position `p` and body-frame velocity `v`.
///
/// Euclidean state order is `[M, p_x, p_y, v_x, v_y]`, controls are
/// `[τ, φ_x, φ_y]` and the state constraints bound `M`, `v_x` and `v_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct UwVehicleModel {
    step: f64,
    mass: Matrix2<f64>,
    mass_inv: Matrix2<f64>,
    /// `[M̄, v̄_x, v̄_y]`.
    state_bounds: [f64; 3],
    bounds: ControlBox,
}

impl UwVehicleModel {
    /// `control_bounds` is `[τ̄, φ̄_x, φ̄_y]`, `state_bounds` is `[M̄, v̄_x, v̄_y]`.
    pub fn new(
        step: f64,
        control_bounds: [f64; 3],
        state_bounds: [f64; 3],
        mass: Matrix2<f64>,
    ) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
        }
        if state_bounds.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::InvalidArgument("state bounds must be positive".into()));
        }
        if (mass - mass.transpose()).amax() > 1e-12 * mass.amax().max(1.0) {
            return Err(Error::InvalidArgument("mass matrix must be symmetric".into()));
        }
        let mass_inv = mass.try_inverse().ok_or(Error::SingularMass)?;
        if mass.cholesky().is_none() {
            return Err(Error::InvalidArgument(
                "mass matrix must be positive definite".into(),
            ));
        }
        Ok(UwVehicleModel {
            step,
            mass,
            mass_inv,
            state_bounds,
            bounds: ControlBox::symmetric(&control_bounds)?,
        })
    }

    pub fn mass(&self) -> &Matrix2<f64> {
        &self.mass
    }

    pub fn state_bounds(&self) -> [f64; 3] {
        self.state_bounds
    }
}

const SKEW: Matrix2<f64> = Matrix2::new(0.0, -1.0, 1.0, 0.0);

impl PlantModel for UwVehicleModel {
    fn euclid_dim(&self) -> usize {
        5
    }

    fn constraint_dim(&self) -> usize {
        3
    }

    fn control_box(&self) -> &ControlBox {
        &self.bounds
    }

    fn step_size(&self) -> f64 {
        self.step
    }

    fn chart_load(&self, x: &[f64]) -> f64 {
        (self.step * x[0]).abs()
    }

    fn group_step(&self, x: &[f64]) -> Matrix2<f64> {
        discrete_rotation(self.step, x[0])
    }

    fn increment(&self, x: &[f64]) -> f64 {
        (self.step * x[0]).asin()
    }

    fn increment_vjp(&self, x: &[f64], bar: f64, x_bar: &mut [f64]) {
        let s = self.step * x[0];
        x_bar[0] += bar * self.step / (1.0 - s * s).sqrt();
    }

    fn euclid_step(&self, q: &Matrix2<f64>, x: &[f64], u: &[f64], out: &mut [f64]) {
        let h = self.step;
        let v = Vector2::new(x[3], x[4]);
        let shift = q * v * h;
        let f = discrete_rotation(h, x[0]);
        let v_next = self.mass_inv * (f.transpose() * self.mass * v + Vector2::new(u[1], u[2]) * h);
        out[0] = x[0] + h * u[0];
        out[1] = x[1] + shift[0];
        out[2] = x[2] + shift[1];
        out[3] = v_next[0];
        out[4] = v_next[1];
    }

    fn euclid_vjp(
        &self,
        q: &Matrix2<f64>,
        x: &[f64],
        _u: &[f64],
        out_bar: &[f64],
        q_bar: &mut f64,
        x_bar: &mut [f64],
        u_bar: &mut [f64],
    ) {
        let h = self.step;
        let v = Vector2::new(x[3], x[4]);
        let p_bar = Vector2::new(out_bar[1], out_bar[2]);
        let vn_bar = Vector2::new(out_bar[3], out_bar[4]);

        // M' = M + h τ
        x_bar[0] += out_bar[0];
        u_bar[0] += h * out_bar[0];

        // p' = p + h R v
        x_bar[1] += p_bar[0];
        x_bar[2] += p_bar[1];
        let v_from_p = q.transpose() * p_bar * h;
        *q_bar += h * p_bar.dot(&(q * SKEW * v));

        // v' = A⁻¹ (F(M)ᵀ A v + h φ)
        let w = self.mass_inv.transpose() * vn_bar;
        let f = discrete_rotation(h, x[0]);
        let df = discrete_rotation_derivative(h, x[0]);
        let v_from_v = self.mass.transpose() * f * w;
        x_bar[0] += w.dot(&(df.transpose() * self.mass * v));
        x_bar[3] += v_from_p[0] + v_from_v[0];
        x_bar[4] += v_from_p[1] + v_from_v[1];
        u_bar[1] += h * w[0];
        u_bar[2] += h * w[1];
    }

    fn constraints(&self, x: &[f64], out: &mut [f64]) {
        let [m, vx, vy] = self.state_bounds;
        out[0] = 0.5 * (x[0] * x[0] - m * m);
        out[1] = 0.5 * (x[3] * x[3] - vx * vx);
        out[2] = 0.5 * (x[4] * x[4] - vy * vy);
    }

    fn constraints_vjp(&self, x: &[f64], mu: &[f64], x_bar: &mut [f64]) {
        x_bar[0] += mu[0] * x[0];
        x_bar[3] += mu[1] * x[3];
        x_bar[4] += mu[2] * x[4];
    }

    fn constraint_shape(&self) -> Vec<(usize, f64)> {
        let [m, vx, vy] = self.state_bounds;
        vec![(0, m), (3, vx), (4, vy)]
    }
}

/// Next state of a vehicle after one step.
#[derive(Debug, Clone, PartialEq)]
pub struct UwState {
    pub rotation: GroupElement,
    pub momentum: f64,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

/// One vehicle step from `(R, M, p, v)` under torque `tau` and force `phi`.
#[allow(clippy::too_many_arguments)]
pub fn uw_step(
    r: &GroupElement,
    momentum: f64,
    position: [f64; 2],
    velocity: [f64; 2],
    tau: f64,
    phi: [f64; 2],
    step: f64,
    mass: &Matrix2<f64>,
) -> Result<UwState> {
    if r.group() != GroupId::So2 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: r.group().algebra_dim(),
        });
    }
    let load = (step * momentum).abs();
    if load >= CHART_GUARD {
        return Err(Error::ChartViolation {
            plant: 0,
            step: 0,
            value: load,
        });
    }
    let mass_inv = mass.try_inverse().ok_or(Error::SingularMass)?;
    let q = r.block(0);
    let v = Vector2::from(velocity);
    let f = discrete_rotation(step, momentum);
    let p_next = Vector2::from(position) + q * v * step;
    let v_next = mass_inv * (f.transpose() * mass * v + Vector2::from(phi) * step);
    Ok(UwState {
        rotation: GroupElement::from_blocks(GroupId::So2, &[q * f]),
        momentum: momentum + step * tau,
        position: [p_next[0], p_next[1]],
        velocity: [v_next[0], v_next[1]],
    })
}
