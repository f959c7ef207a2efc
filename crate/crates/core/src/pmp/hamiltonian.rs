//! Per-step Hamiltonian, its control gradient and the backward adjoint sweep.

use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::multiplex::{z, z_gradient, JointControl};
use crate::optimizer::TranscribedNlp;
use crate::plants::{Ensemble, JointTrajectory, PlantModel, CHART_GUARD};

/// Covectors entering the Hamiltonian at one step.
///
/// `theta` holds one algebra covector per plant. For the planar rotation
/// group it coincides with the left-trivialized rotation adjoint. `xi` is the
/// stacked Euclidean covector paired with the next state.
#[derive(Debug, Clone, Copy)]
pub struct Covectors<'a> {
    pub theta: &'a [f64],
    pub xi: &'a [f64],
    pub chi: [f64; 2],
    pub nu: f64,
}

fn check_shapes(ensemble: &Ensemble, q: &[Matrix2<f64>], x: &[f64], u: &JointControl, cov: &Covectors) -> Result<()> {
    let pairs = [
        (ensemble.len(), q.len()),
        (ensemble.state_dim(), x.len()),
        (ensemble.len(), cov.theta.len()),
        (ensemble.state_dim(), cov.xi.len()),
    ];
    for (expected, got) in pairs {
        if expected != got {
            return Err(Error::DimensionMismatch { expected, got });
        }
    }
    u.check_layout(ensemble.layout())?;
    for (i, plant) in ensemble.plants().iter().enumerate() {
        let load = plant.chart_load(&x[ensemble.state_range(i)]);
        if !(load < CHART_GUARD) {
            return Err(Error::ChartViolation { plant: i, step: 0, value: load });
        }
    }
    Ok(())
}

/// `ν ½‖U‖² + Σᵢ θⁱ log sᵢ(x) + Σᵢ ⟨ξⁱ, fᵢ(q, x, U)⟩ + ⟨χ, z(U)⟩`.
pub fn hamiltonian(
    ensemble: &Ensemble,
    q: &[Matrix2<f64>],
    x: &[f64],
    u: &JointControl,
    cov: &Covectors,
) -> Result<f64> {
    check_shapes(ensemble, q, x, u, cov)?;
    let mut value = cov.nu * 0.5 * u.norm_sq();
    for (i, plant) in ensemble.plants().iter().enumerate() {
        let sr = ensemble.state_range(i);
        let xi = &x[sr.clone()];
        value += cov.theta[i] * plant.increment(xi);
        let mut next = vec![0.0; xi.len()];
        plant.euclid_step(&q[i], xi, &u.blocks[i], &mut next);
        value += next.iter().zip(&cov.xi[sr]).map(|(a, b)| a * b).sum::<f64>();
    }
    let zu = z(u);
    Ok(value + cov.chi[0] * zu[0] + cov.chi[1] * zu[1])
}

/// Gradient of [`hamiltonian`] with respect to the flattened controls.
pub fn grad_h_control(
    ensemble: &Ensemble,
    q: &[Matrix2<f64>],
    x: &[f64],
    u: &JointControl,
    cov: &Covectors,
) -> Result<Vec<f64>> {
    check_shapes(ensemble, q, x, u, cov)?;
    let layout = ensemble.layout();
    let mut grad: Vec<f64> = u.to_flat().iter().map(|v| cov.nu * v).collect();
    for (i, plant) in ensemble.plants().iter().enumerate() {
        let sr = ensemble.state_range(i);
        let mut q_bar = 0.0;
        let mut x_bar = vec![0.0; sr.len()];
        plant.euclid_vjp(
            &q[i],
            &x[sr.clone()],
            &u.blocks[i],
            &cov.xi[sr],
            &mut q_bar,
            &mut x_bar,
            &mut grad[layout.range(i)],
        );
    }
    if ensemble.len() >= 2 {
        for (i, block) in z_gradient(u, cov.chi).iter().enumerate() {
            for (g, v) in grad[layout.range(i)].iter_mut().zip(block) {
                *g += v;
            }
        }
    }
    Ok(grad)
}

/// Terminal adjoint data that is not fixed by transversality.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSeeds {
    /// One rotation covector per plant.
    pub rotation: Vec<f64>,
    /// Stacked Euclidean covector.
    pub state: Vec<f64>,
}

impl TerminalSeeds {
    pub fn zeros(ensemble: &Ensemble) -> Self {
        TerminalSeeds {
            rotation: vec![0.0; ensemble.len()],
            state: vec![0.0; ensemble.state_dim()],
        }
    }
}

/// Adjoint sequences for `t = 0..N−1`; entry `t` pairs with the step from `t` to `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjoints {
    pub rho: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
}

/// Runs the adjoint recursion backwards along `traj`.
///
/// The last adjoints are the seeds plus `ν` times the goal-cost gradient plus
/// the terminal constraint term `μ_N ∇g(x_N)`. Then, for `t = N−1, …, 1`,
///
/// ```text
/// ρ_{t−1} = ρ_t + ∂_q ⟨ξ_t, f(q_t, x_t, U_t)⟩
/// ξ_{t−1} = ∂_x H_t + ∂_x ⟨μ_t, g(x_t)⟩
/// ```
///
/// `mu[t − 1]` holds the stacked constraint covector at time `t = 1..N`.
pub fn adjoint_backward(
    nlp: &TranscribedNlp,
    traj: &JointTrajectory,
    seeds: &TerminalSeeds,
    mu: &[Vec<f64>],
    nu: f64,
) -> Result<Adjoints> {
    let ensemble = nlp.ensemble();
    let horizon = traj.horizon();
    if horizon != nlp.horizon() {
        return Err(Error::DimensionMismatch { expected: nlp.horizon(), got: horizon });
    }
    if mu.len() != horizon {
        return Err(Error::DimensionMismatch { expected: horizon, got: mu.len() });
    }
    let mut rho = vec![Vec::new(); horizon];
    let mut xi = vec![Vec::new(); horizon];
    let mut r = seeds.rotation.clone();
    let mut s = seeds.state.clone();
    for i in 0..ensemble.len() {
        let sr = ensemble.state_range(i);
        if let (Some(w), Some((a, res))) = (
            nlp.goal_weight(i),
            nlp.target_residual(i, &traj.rotations[horizon][i], &traj.states[horizon][sr.clone()]),
        ) {
            r[i] += nu * w * a;
            for (k, idx) in sr.enumerate() {
                s[idx] += nu * w * res[k];
            }
        }
    }
    add_constraint_term(ensemble, &traj.states[horizon], &mu[horizon - 1], &mut s);
    for t in (0..horizon).rev() {
        rho[t] = r.clone();
        xi[t] = s.clone();
        if t == 0 {
            break;
        }
        let (r_prev, s_prev) = backward_step(ensemble, traj, t, &r, &s, &mu[t - 1])?;
        r = r_prev;
        s = s_prev;
    }
    Ok(Adjoints { rho, xi })
}

/// One step of the recursion: adjoints paired with step `t − 1` from those
/// paired with step `t`.
pub(crate) fn backward_step(
    ensemble: &Ensemble,
    traj: &JointTrajectory,
    t: usize,
    rho: &[f64],
    xi: &[f64],
    mu: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = &traj.states[t];
    let mut r = rho.to_vec();
    let mut s = vec![0.0; xi.len()];
    for (i, plant) in ensemble.plants().iter().enumerate() {
        let sr = ensemble.state_range(i);
        let load = plant.chart_load(&x[sr.clone()]);
        if !(load < CHART_GUARD) {
            return Err(Error::ChartViolation { plant: i, step: t, value: load });
        }
        plant.increment_vjp(&x[sr.clone()], rho[i], &mut s[sr.clone()]);
        let mut u_bar = vec![0.0; plant.control_dim()];
        plant.euclid_vjp(
            &traj.rotations[t][i],
            &x[sr.clone()],
            &traj.controls[t].blocks[i],
            &xi[sr.clone()],
            &mut r[i],
            &mut s[sr],
            &mut u_bar,
        );
    }
    add_constraint_term(ensemble, x, mu, &mut s);
    Ok((r, s))
}

pub(crate) fn add_constraint_term(ensemble: &Ensemble, x: &[f64], mu: &[f64], out: &mut [f64]) {
    for (i, plant) in ensemble.plants().iter().enumerate() {
        let sr = ensemble.state_range(i);
        plant.constraints_vjp(&x[sr.clone()], &mu[ensemble.constraint_range(i)], &mut out[sr]);
    }
}
