//! Discrete-mechanics plant models and joint rollouts.
//!
//! Every shipped plant has configuration `(R, x)` with `R ∈ SO(2)` and a
//! Euclidean state `x`. One step is
//!
//! ```text
//! R_{t+1} = R_t s(x_t)          s(x) = exp(increment(x))
//! x_{t+1} = f(R_t, x_t, u_t)
//! ```
//!
//! Besides forward maps, each model exposes vector-Jacobian products. The
//! optimizer's gradient sweep and the verifier's adjoint recursion are both
//! built from them. Group cotangents are left-trivialized scalars.

mod satellite;
mod uw;

use nalgebra::Matrix2;

pub use satellite::{satellite_step, SatelliteModel};
pub use uw::{uw_step, UwState, UwVehicleModel};

use crate::error::{Error, Result};
use crate::liegroup::{block_angle, GroupElement, GroupId};
use crate::multiplex::{aux_rollout, AuxState, ControlBox, ControlLayout, JointControl};

/// `|h M|` must stay below this for `√(1 − h²M²)` to be safely real.
pub const CHART_GUARD: f64 = 1.0 - 1e-12;

/// The discrete rotation `F(ω) = [[c, −hω], [hω, c]]` with `c = √(1 − h²ω²)`.
pub fn discrete_rotation(step: f64, omega: f64) -> Matrix2<f64> {
    let s = step * omega;
    let c = (1.0 - s * s).sqrt();
    Matrix2::new(c, -s, s, c)
}

/// `dF/dω` for [`discrete_rotation`].
pub fn discrete_rotation_derivative(step: f64, omega: f64) -> Matrix2<f64> {
    let s = step * omega;
    let dc = -step * s / (1.0 - s * s).sqrt();
    Matrix2::new(dc, -step, step, dc)
}

/// Interface shared by the plant models.
pub trait PlantModel {
    fn group(&self) -> GroupId {
        GroupId::So2
    }
    fn euclid_dim(&self) -> usize;
    fn constraint_dim(&self) -> usize;
    fn control_box(&self) -> &ControlBox;
    fn control_dim(&self) -> usize {
        self.control_box().dim()
    }
    fn step_size(&self) -> f64;

    /// Quantity that must stay below [`CHART_GUARD`] for the group step to exist.
    fn chart_load(&self, x: &[f64]) -> f64;
    /// Group step `s(x)`.
    fn group_step(&self, x: &[f64]) -> Matrix2<f64>;
    /// Algebra coordinate of `s(x)`, that is `log s(x)`.
    fn increment(&self, x: &[f64]) -> f64;
    /// Adds `bar · ∂ increment / ∂x` into `x_bar`.
    fn increment_vjp(&self, x: &[f64], bar: f64, x_bar: &mut [f64]);

    fn euclid_step(&self, q: &Matrix2<f64>, x: &[f64], u: &[f64], out: &mut [f64]);
    /// Pulls the cotangent `out_bar` of `f(q, x, u)` back onto `q` (left-trivialized),
    /// `x` and `u`, accumulating into the given buffers.
    #[allow(clippy::too_many_arguments)]
    fn euclid_vjp(
        &self,
        q: &Matrix2<f64>,
        x: &[f64],
        u: &[f64],
        out_bar: &[f64],
        q_bar: &mut f64,
        x_bar: &mut [f64],
        u_bar: &mut [f64],
    );

    /// State constraints, each required to be `≤ 0`.
    fn constraints(&self, x: &[f64], out: &mut [f64]);
    /// Adds `Σ_k mu_k ∂g_k/∂x` into `x_bar`.
    fn constraints_vjp(&self, x: &[f64], mu: &[f64], x_bar: &mut [f64]);

    /// Every shipped constraint has the form `½ (x_c² − b²)`. This returns the
    /// pairs `(c, b)` in constraint order.
    fn constraint_shape(&self) -> Vec<(usize, f64)>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Plant {
    Satellite(SatelliteModel),
    UwVehicle(UwVehicleModel),
}

impl Plant {
    pub fn kind(&self) -> &'static str {
        match self {
            Plant::Satellite(_) => "satellite",
            Plant::UwVehicle(_) => "uw_vehicle",
        }
    }
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            Plant::Satellite($m) => $e,
            Plant::UwVehicle($m) => $e,
        }
    };
}

impl PlantModel for Plant {
    fn euclid_dim(&self) -> usize {
        delegate!(self, m => m.euclid_dim())
    }
    fn constraint_dim(&self) -> usize {
        delegate!(self, m => m.constraint_dim())
    }
    fn control_box(&self) -> &ControlBox {
        delegate!(self, m => m.control_box())
    }
    fn step_size(&self) -> f64 {
        delegate!(self, m => m.step_size())
    }
    fn chart_load(&self, x: &[f64]) -> f64 {
        delegate!(self, m => m.chart_load(x))
    }
    fn group_step(&self, x: &[f64]) -> Matrix2<f64> {
        delegate!(self, m => m.group_step(x))
    }
    fn increment(&self, x: &[f64]) -> f64 {
        delegate!(self, m => m.increment(x))
    }
    fn increment_vjp(&self, x: &[f64], bar: f64, x_bar: &mut [f64]) {
        delegate!(self, m => m.increment_vjp(x, bar, x_bar))
    }
    fn euclid_step(&self, q: &Matrix2<f64>, x: &[f64], u: &[f64], out: &mut [f64]) {
        delegate!(self, m => m.euclid_step(q, x, u, out))
    }
    fn euclid_vjp(
        &self,
        q: &Matrix2<f64>,
        x: &[f64],
        u: &[f64],
        out_bar: &[f64],
        q_bar: &mut f64,
        x_bar: &mut [f64],
        u_bar: &mut [f64],
    ) {
        delegate!(self, m => m.euclid_vjp(q, x, u, out_bar, q_bar, x_bar, u_bar))
    }
    fn constraints(&self, x: &[f64], out: &mut [f64]) {
        delegate!(self, m => m.constraints(x, out))
    }
    fn constraints_vjp(&self, x: &[f64], mu: &[f64], x_bar: &mut [f64]) {
        delegate!(self, m => m.constraints_vjp(x, mu, x_bar))
    }
    fn constraint_shape(&self) -> Vec<(usize, f64)> {
        delegate!(self, m => m.constraint_shape())
    }
}

/// A set of plants evolving side by side, with the offsets needed to address
/// each plant's slice of the stacked Euclidean state and constraint vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    plants: Vec<Plant>,
    layout: ControlLayout,
    state_offsets: Vec<usize>,
    constraint_offsets: Vec<usize>,
}

fn prefix_sums(sizes: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out = vec![0];
    for s in sizes {
        out.push(out.last().unwrap() + s);
    }
    out
}

impl Ensemble {
    pub fn new(plants: Vec<Plant>) -> Self {
        let layout = ControlLayout::new(plants.iter().map(|p| p.control_box().clone()).collect());
        let state_offsets = prefix_sums(plants.iter().map(|p| p.euclid_dim()));
        let constraint_offsets = prefix_sums(plants.iter().map(|p| p.constraint_dim()));
        Ensemble {
            plants,
            layout,
            state_offsets,
            constraint_offsets,
        }
    }

    pub fn plants(&self) -> &[Plant] {
        &self.plants
    }

    pub fn len(&self) -> usize {
        self.plants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plants.is_empty()
    }

    pub fn layout(&self) -> &ControlLayout {
        &self.layout
    }

    pub fn state_dim(&self) -> usize {
        *self.state_offsets.last().unwrap()
    }

    pub fn state_range(&self, i: usize) -> std::ops::Range<usize> {
        self.state_offsets[i]..self.state_offsets[i + 1]
    }

    pub fn constraint_dim(&self) -> usize {
        *self.constraint_offsets.last().unwrap()
    }

    pub fn constraint_range(&self, i: usize) -> std::ops::Range<usize> {
        self.constraint_offsets[i]..self.constraint_offsets[i + 1]
    }

    /// Stacked constraint values `g(x)` for one time step.
    pub fn constraints(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.constraint_dim()];
        for (i, p) in self.plants.iter().enumerate() {
            p.constraints(&x[self.state_range(i)], &mut out[self.constraint_range(i)]);
        }
        out
    }
}

/// States, auxiliary accumulator and controls of a joint rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTrajectory {
    /// `rotations[t][i]` is plant `i`'s rotation at time `t`, for `t = 0..=N`.
    pub rotations: Vec<Vec<Matrix2<f64>>>,
    /// Cumulative heading obtained by summing chart increments from the initial angle.
    pub headings: Vec<Vec<f64>>,
    /// Stacked Euclidean states, `t = 0..=N`.
    pub states: Vec<Vec<f64>>,
    pub aux: Vec<AuxState>,
    /// Controls for `t = 0..N`.
    pub controls: Vec<JointControl>,
}

impl JointTrajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn rotation(&self, t: usize, i: usize) -> GroupElement {
        GroupElement::from_blocks(GroupId::So2, &[self.rotations[t][i]])
    }

    /// Wrapped chart angle of plant `i` at time `t`.
    pub fn angle(&self, t: usize, i: usize) -> f64 {
        block_angle(&self.rotations[t][i])
    }
}

/// Rolls the joint system forward. On a chart violation the trajectory up to
/// the offending step is returned together with the error.
pub fn joint_rollout_partial(
    ensemble: &Ensemble,
    q0: &[Matrix2<f64>],
    x0: &[f64],
    controls: &[JointControl],
) -> Result<(JointTrajectory, Option<Error>)> {
    if q0.len() != ensemble.len() {
        return Err(Error::DimensionMismatch {
            expected: ensemble.len(),
            got: q0.len(),
        });
    }
    if x0.len() != ensemble.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: ensemble.state_dim(),
            got: x0.len(),
        });
    }
    for u in controls {
        u.check_layout(ensemble.layout())?;
    }
    let n = controls.len();
    let mut rotations = Vec::with_capacity(n + 1);
    let mut headings = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    rotations.push(q0.to_vec());
    headings.push(q0.iter().map(block_angle).collect::<Vec<_>>());
    states.push(x0.to_vec());
    let mut failure = None;
    'time: for (t, u) in controls.iter().enumerate() {
        let q = &rotations[t];
        let x = &states[t];
        let mut q_next = Vec::with_capacity(ensemble.len());
        let mut h_next = headings[t].clone();
        let mut x_next = vec![0.0; x.len()];
        for (i, plant) in ensemble.plants().iter().enumerate() {
            let xi = &x[ensemble.state_range(i)];
            let load = plant.chart_load(xi);
            if !(load < CHART_GUARD) {
                failure = Some(Error::ChartViolation {
                    plant: i,
                    step: t,
                    value: load,
                });
                break 'time;
            }
            q_next.push(q[i] * plant.group_step(xi));
            h_next[i] += plant.increment(xi);
            plant.euclid_step(&q[i], xi, &u.blocks[i], &mut x_next[ensemble.state_range(i)]);
        }
        rotations.push(q_next);
        headings.push(h_next);
        states.push(x_next);
    }
    let done = states.len() - 1;
    let controls = controls[..done].to_vec();
    let aux = aux_rollout(&controls);
    Ok((
        JointTrajectory {
            rotations,
            headings,
            states,
            aux,
            controls,
        },
        failure,
    ))
}

/// Rolls the joint system forward, failing on the first chart violation.
pub fn joint_rollout(
    ensemble: &Ensemble,
    q0: &[Matrix2<f64>],
    x0: &[f64],
    controls: &[JointControl],
) -> Result<JointTrajectory> {
    match joint_rollout_partial(ensemble, q0, x0, controls)? {
        (traj, None) => Ok(traj),
        (_, Some(err)) => Err(err),
    }
}

/// Constraint values `g^i_t` indexed `[t][plant][k]`.
pub fn constraint_values(traj: &JointTrajectory, ensemble: &Ensemble) -> Vec<Vec<Vec<f64>>> {
    traj.states
        .iter()
        .map(|x| {
            ensemble
                .plants()
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let mut out = vec![0.0; p.constraint_dim()];
                    p.constraints(&x[ensemble.state_range(i)], &mut out);
                    out
                })
                .collect()
        })
        .collect()
}
