//! Evaluation of every condition for a given certificate.

use serde::{Serialize, Serializer};

use super::estimate::cone_directions;
use super::hamiltonian::{add_constraint_term, backward_step, grad_h_control, Covectors};
use super::{AdjointCertificate, VerifierTolerances};
use crate::error::{Error, Result};
use crate::multiplex::{star_membership, z, ConeDirection, MEMBERSHIP_TOL};
use crate::optimizer::TranscribedNlp;
use crate::plants::{joint_rollout_partial, JointTrajectory, Plant, PlantModel};
use crate::scenario::Scenario;

/// One checked condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Condition {
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// The condition does not apply, for example transversality when every endpoint is fixed.
    pub skipped: bool,
}

impl Condition {
    fn at_most(value: f64, tolerance: f64) -> Self {
        Condition {
            value,
            tolerance,
            pass: value <= tolerance,
            skipped: false,
        }
    }

    fn skipped(tolerance: f64) -> Self {
        Condition {
            value: 0.0,
            tolerance,
            pass: true,
            skipped: true,
        }
    }
}

/// The satellite-specific identities: `ρ` constant in time, `τ = hξ` at
/// interior steps of the active plant, and the coupling `hξʲ = −(χ₁ − χ₂) τⁱ`
/// of an idle plant `j` to the active plant `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SatelliteIdentities {
    pub rho_drift: f64,
    pub control_law: f64,
    pub idle_coupling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmpReport {
    pub verdict: bool,
    pub nu: f64,
    pub degenerate: bool,
    pub nontriviality: Condition,
    pub adjoint: Condition,
    pub transversality: Condition,
    pub stationarity: Condition,
    pub slackness: Condition,
    pub sign: Condition,
    pub multiplexing: Condition,
    pub feasibility: Condition,
    /// Step with the largest stationarity residual.
    pub worst_step: usize,
    /// Active plant per step; `-1` when no control is above the membership tolerance.
    #[serde(serialize_with = "schedule_as_integers")]
    pub schedule: Vec<Option<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub satellite: Option<SatelliteIdentities>,
}

fn schedule_as_integers<S: Serializer>(schedule: &[Option<usize>], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(schedule.iter().map(|b| b.map_or(-1, |i| i as i64)))
}

fn check_shape(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn validate_shapes(nlp: &TranscribedNlp, traj: &JointTrajectory, cert: &AdjointCertificate) -> Result<()> {
    let ensemble = nlp.ensemble();
    let horizon = nlp.horizon();
    check_shape(horizon, traj.horizon())?;
    check_shape(horizon + 1, traj.states.len())?;
    check_shape(horizon + 1, traj.rotations.len())?;
    check_shape(horizon, cert.rho.len())?;
    check_shape(horizon, cert.xi.len())?;
    check_shape(horizon, cert.mu.len())?;
    for t in 0..horizon {
        check_shape(ensemble.len(), cert.rho[t].len())?;
        check_shape(ensemble.state_dim(), cert.xi[t].len())?;
        check_shape(ensemble.constraint_dim(), cert.mu[t].len())?;
    }
    for t in 0..=horizon {
        check_shape(ensemble.len(), traj.rotations[t].len())?;
        check_shape(ensemble.state_dim(), traj.states[t].len())?;
    }
    for u in &traj.controls {
        u.check_layout(ensemble.layout())?;
    }
    Ok(())
}

/// Largest violation among dynamics, boundary conditions, state constraints
/// and control boxes.
fn feasibility(nlp: &TranscribedNlp, traj: &JointTrajectory, constraints: &[Vec<f64>]) -> Result<f64> {
    let ensemble = nlp.ensemble();
    let (replay, failure) =
        joint_rollout_partial(ensemble, nlp.initial_rotations(), nlp.initial_state(), &traj.controls)?;
    if let Some(err) = failure {
        return Err(err);
    }
    let mut worst: f64 = 0.0;
    for t in 0..replay.states.len() {
        for (a, b) in replay.states[t].iter().zip(&traj.states[t]) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in replay.rotations[t].iter().zip(&traj.rotations[t]) {
            worst = worst.max((a - b).abs().max());
        }
    }
    let horizon = nlp.horizon();
    for i in 0..ensemble.len() {
        if nlp.terminal_row(i).is_some() {
            let sr = ensemble.state_range(i);
            let (a, s) = nlp
                .target_residual(i, &traj.rotations[horizon][i], &traj.states[horizon][sr])
                .expect("fixed endpoint has a target");
            worst = s.iter().fold(worst.max(a.abs()), |m, v| m.max(v.abs()));
        }
    }
    for g in constraints.iter().flatten() {
        worst = worst.max(*g);
    }
    for u in &traj.controls {
        for (block, bx) in u.blocks.iter().zip(ensemble.layout().boxes()) {
            for (k, v) in block.iter().enumerate() {
                worst = worst.max(v - bx.upper()[k]).max(bx.lower()[k] - v);
            }
        }
    }
    Ok(worst)
}

pub(crate) fn check_with(
    nlp: &TranscribedNlp,
    traj: &JointTrajectory,
    cert: &AdjointCertificate,
    tols: &VerifierTolerances,
) -> Result<PmpReport> {
    validate_shapes(nlp, traj, cert)?;
    let ensemble = nlp.ensemble();
    let layout = ensemble.layout();
    let horizon = nlp.horizon();

    // g(x_t) for t = 1..N, stacked.
    let constraints: Vec<Vec<f64>> = traj.states[1..].iter().map(|x| ensemble.constraints(x)).collect();
    let feasibility = feasibility(nlp, traj, &constraints)?;

    let mut adjoint: f64 = 0.0;
    for t in 1..horizon {
        let (r, s) = backward_step(ensemble, traj, t, &cert.rho[t], &cert.xi[t], &cert.mu[t - 1])?;
        for (a, b) in r.iter().zip(&cert.rho[t - 1]).chain(s.iter().zip(&cert.xi[t - 1])) {
            adjoint = adjoint.max((a - b).abs());
        }
    }

    let open: Vec<usize> = (0..ensemble.len()).filter(|i| nlp.terminal_row(*i).is_none()).collect();
    let transversality = if open.is_empty() {
        Condition::skipped(tols.transversality)
    } else {
        let last = horizon - 1;
        let mut expected_xi = vec![0.0; ensemble.state_dim()];
        add_constraint_term(ensemble, &traj.states[horizon], &cert.mu[last], &mut expected_xi);
        let mut worst: f64 = 0.0;
        for &i in &open {
            let sr = ensemble.state_range(i);
            let mut expected_rho = 0.0;
            if let (Some(w), Some((a, s))) = (
                nlp.goal_weight(i),
                nlp.target_residual(i, &traj.rotations[horizon][i], &traj.states[horizon][sr.clone()]),
            ) {
                expected_rho = cert.nu * w * a;
                for (k, idx) in sr.clone().enumerate() {
                    expected_xi[idx] += cert.nu * w * s[k];
                }
            }
            worst = worst.max((cert.rho[last][i] - expected_rho).abs());
            for idx in sr {
                worst = worst.max((cert.xi[last][idx] - expected_xi[idx]).abs());
            }
        }
        Condition::at_most(worst, tols.transversality)
    };

    let mut stationarity: f64 = 0.0;
    let mut worst_step = 0;
    for t in 0..horizon {
        let cov = Covectors {
            theta: &cert.rho[t],
            xi: &cert.xi[t],
            chi: cert.chi,
            nu: cert.nu,
        };
        let grad = grad_h_control(ensemble, &traj.rotations[t], &traj.states[t], &traj.controls[t], &cov)
            .map_err(|e| match e {
                Error::ChartViolation { plant, value, .. } => Error::ChartViolation { plant, step: t, value },
                other => other,
            })?;
        for (g, d) in grad.iter().zip(cone_directions(layout, &traj.controls[t])) {
            let violation = match d {
                ConeDirection::Free => g.abs(),
                ConeDirection::NonPositive => (-g).max(0.0),
                ConeDirection::NonNegative => g.max(0.0),
                ConeDirection::Pinned => 0.0,
            };
            if violation > stationarity {
                stationarity = violation;
                worst_step = t;
            }
        }
    }

    let mut slackness: f64 = 0.0;
    let mut sign: f64 = 0.0;
    for (mu, g) in cert.mu.iter().zip(&constraints) {
        for (m, v) in mu.iter().zip(g) {
            slackness = slackness.max((m * v).abs());
            sign = sign.max(*m);
        }
    }

    let mut total = [0.0, 0.0];
    for u in &traj.controls {
        let zu = z(u);
        total[0] += zu[0];
        total[1] += zu[1];
    }
    let multiplexing = (total[0] * total[0] + total[1] * total[1]).sqrt();

    let magnitude = cert.magnitude();
    let nontriviality = Condition {
        value: magnitude,
        tolerance: tols.nontriviality,
        pass: magnitude > tols.nontriviality,
        skipped: false,
    };
    let schedule: Vec<Option<usize>> = traj
        .controls
        .iter()
        .map(|u| star_membership(layout, u, MEMBERSHIP_TOL).branch)
        .collect();

    let mut report = PmpReport {
        verdict: false,
        nu: cert.nu,
        degenerate: cert.degenerate,
        nontriviality,
        adjoint: Condition::at_most(adjoint, tols.adjoint),
        transversality,
        stationarity: Condition::at_most(stationarity, tols.stationarity),
        slackness: Condition::at_most(slackness, tols.slackness),
        sign: Condition::at_most(sign, tols.sign),
        multiplexing: Condition::at_most(multiplexing, tols.multiplexing),
        feasibility: Condition::at_most(feasibility, tols.feasibility),
        worst_step,
        satellite: satellite_identities_with(nlp, traj, cert, &schedule, tols),
        schedule,
    };
    report.verdict = [
        report.nontriviality,
        report.adjoint,
        report.transversality,
        report.stationarity,
        report.slackness,
        report.sign,
        report.multiplexing,
        report.feasibility,
    ]
    .iter()
    .all(|c| c.pass);
    Ok(report)
}

/// Evaluates every condition of `cert` along `traj`.
pub fn check_conditions(
    traj: &JointTrajectory,
    cert: &AdjointCertificate,
    scenario: &Scenario,
    tols: &VerifierTolerances,
) -> Result<PmpReport> {
    tols.validate()?;
    let nlp = TranscribedNlp::new(scenario)?;
    check_with(&nlp, traj, cert, tols)
}

fn satellite_identities_with(
    nlp: &TranscribedNlp,
    traj: &JointTrajectory,
    cert: &AdjointCertificate,
    schedule: &[Option<usize>],
    tols: &VerifierTolerances,
) -> Option<SatelliteIdentities> {
    let ensemble = nlp.ensemble();
    let models: Vec<_> = ensemble
        .plants()
        .iter()
        .map(|p| match p {
            Plant::Satellite(m) => Some(m),
            Plant::UwVehicle(_) => None,
        })
        .collect::<Option<Vec<_>>>()?;
    if cert.nu != -1.0 {
        return None;
    }
    let mut out = SatelliteIdentities {
        rho_drift: 0.0,
        control_law: 0.0,
        idle_coupling: 0.0,
    };
    for rho in &cert.rho {
        for (a, b) in rho.iter().zip(&cert.rho[0]) {
            out.rho_drift = out.rho_drift.max((a - b).abs());
        }
    }
    let chi_diff = cert.chi[0] - cert.chi[1];
    for (t, branch) in schedule.iter().enumerate() {
        let Some(i) = *branch else { continue };
        let tau = traj.controls[t].blocks[i][0];
        if tau.abs() >= models[i].torque_bound() - tols.activation {
            continue;
        }
        let h = models[i].step_size();
        let xi = |j: usize| cert.xi[t][ensemble.state_range(j).start];
        out.control_law = out.control_law.max((tau - h * xi(i)).abs());
        for (j, model) in models.iter().enumerate() {
            if j != i {
                out.idle_coupling = out.idle_coupling.max((model.step_size() * xi(j) + chi_diff * tau).abs());
            }
        }
    }
    Some(out)
}

/// The satellite identities of a normal certificate; `None` unless every
/// plant is a satellite and `ν = −1`.
pub fn satellite_identities(
    traj: &JointTrajectory,
    cert: &AdjointCertificate,
    scenario: &Scenario,
) -> Result<Option<SatelliteIdentities>> {
    let nlp = TranscribedNlp::new(scenario)?;
    validate_shapes(&nlp, traj, cert)?;
    let tols = scenario.verifier.clone();
    let schedule: Vec<Option<usize>> = traj
        .controls
        .iter()
        .map(|u| star_membership(nlp.layout(), u, MEMBERSHIP_TOL).branch)
        .collect();
    Ok(satellite_identities_with(&nlp, traj, cert, &schedule, &tols))
}
