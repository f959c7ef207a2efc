use nalgebra::Matrix2;

use super::{discrete_rotation, PlantModel, CHART_GUARD};
use crate::error::{Error, Result};
use crate::liegroup::{GroupElement, GroupId};
use crate::multiplex::ControlBox;

/// Single-axis satellite: rotation `R` on SO(2) and angular momentum `M`.
///
/// One step is `R' = R F(M)`, `M' = M + h τ`, where `F(M)` is the exact
/// discrete rotation with sine `h M`. The only state constraint is
/// `½ (M² − M̄²) ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteModel {
    step: f64,
    torque_bound: f64,
    momentum_bound: f64,
    /// Moment of inertia in kg·m², kept as metadata; the dynamics do not use it.
    pub inertia: Option<f64>,
    bounds: ControlBox,
}

impl SatelliteModel {
    pub fn new(step: f64, torque_bound: f64, momentum_bound: f64) -> Result<Self> {
        if !(step > 0.0) || !(torque_bound >= 0.0) || !(momentum_bound > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "satellite needs h > 0, torque bound >= 0 and momentum bound > 0 \
                 (got {step}, {torque_bound}, {momentum_bound})"
            )));
        }
        Ok(SatelliteModel {
            step,
            torque_bound,
            momentum_bound,
            inertia: None,
            bounds: ControlBox::symmetric(&[torque_bound])?,
        })
    }

    pub fn with_inertia(mut self, inertia: f64) -> Self {
        self.inertia = Some(inertia);
        self
    }

    pub fn torque_bound(&self) -> f64 {
        self.torque_bound
    }

    pub fn momentum_bound(&self) -> f64 {
        self.momentum_bound
    }
}

impl PlantModel for SatelliteModel {
    fn euclid_dim(&self) -> usize {
        1
    }

    fn constraint_dim(&self) -> usize {
        1
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

    fn euclid_step(&self, _q: &Matrix2<f64>, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = x[0] + self.step * u[0];
    }

    fn euclid_vjp(
        &self,
        _q: &Matrix2<f64>,
        _x: &[f64],
        _u: &[f64],
        out_bar: &[f64],
        _q_bar: &mut f64,
        x_bar: &mut [f64],
        u_bar: &mut [f64],
    ) {
        x_bar[0] += out_bar[0];
        u_bar[0] += self.step * out_bar[0];
    }

    fn constraints(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 0.5 * (x[0] * x[0] - self.momentum_bound * self.momentum_bound);
    }

    fn constraints_vjp(&self, x: &[f64], mu: &[f64], x_bar: &mut [f64]) {
        x_bar[0] += mu[0] * x[0];
    }

    fn constraint_shape(&self) -> Vec<(usize, f64)> {
        vec![(0, self.momentum_bound)]
    }
}

/// One satellite step from `(R, M)` under torque `tau`.
///
/// ```
/// use lieplex::liegroup::GroupElement;
/// use lieplex::plants::satellite_step;
///
/// let r = GroupElement::so2(0.2);
/// let (r_next, m_next) = satellite_step(&r, 0.0, 0.05, 0.1).unwrap();
/// assert_eq!(r_next, r);
/// assert!((m_next - 0.005).abs() < 1e-18);
/// ```
pub fn satellite_step(
    r: &GroupElement,
    momentum: f64,
    tau: f64,
    step: f64,
) -> Result<(GroupElement, f64)> {
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
    let next = r.block(0) * discrete_rotation(step, momentum);
    Ok((
        GroupElement::from_blocks(GroupId::So2, &[next]),
        momentum + step * tau,
    ))
}
