use approx::assert_abs_diff_eq;
use nalgebra::Matrix2;
use proptest::prelude::*;

use super::*;
use crate::liegroup::rotation;
use crate::multiplex::{z, ControlBox, ControlLayout, JointControl};
use crate::optimizer::{solve, transcribe, SolveStatus};
use crate::plants::{Ensemble, Plant, SatelliteModel, UwVehicleModel};

const H: f64 = 0.1;

fn satellites(count: usize) -> Ensemble {
    Ensemble::new(
        (0..count)
            .map(|_| Plant::Satellite(SatelliteModel::new(H, 0.05, 0.1).unwrap()))
            .collect(),
    )
}

fn vehicles() -> Ensemble {
    let model = || {
        Plant::UwVehicle(
            UwVehicleModel::new(0.05, [0.025, 0.05, 0.05], [0.085, 0.02, 0.1], Matrix2::new(2.0, 0.3, 0.3, 1.5))
                .unwrap(),
        )
    };
    Ensemble::new(vec![model(), model()])
}

fn solved(text: &str) -> (Scenario, JointTrajectory) {
    let scenario = Scenario::from_toml_str(text).unwrap();
    let nlp = transcribe(&scenario).unwrap();
    let result = solve(&nlp, &scenario.solver).unwrap();
    assert_eq!(result.status, SolveStatus::Converged);
    (scenario, result.trajectory)
}

const SINGLE: &str = r#"
name = "single"
horizon = 40
step = 0.1
[[plant]]
kind = "satellite"
torque_bound = 0.05
momentum_bound = 0.1
initial = { angle_deg = 0.0, momentum = 0.0 }
terminal = { angle_deg = 4.0, momentum = 0.0 }
[solver]
starts = 1
"#;

#[test]
fn hamiltonian_vanishes_for_zero_covectors() {
    let e = satellites(2);
    let q = [rotation(0.3), rotation(-1.0)];
    let cov = Covectors { theta: &[0.0, 0.0], xi: &[0.0, 0.0], chi: [0.0, 0.0], nu: 0.0 };
    let u = JointControl::new(vec![vec![0.02], vec![-0.01]]);
    assert_eq!(hamiltonian(&e, &q, &[0.01, 0.03], &u, &cov).unwrap(), 0.0);
}

#[test]
fn satellite_control_dependent_part() {
    let e = satellites(2);
    let q = [rotation(0.0), rotation(0.0)];
    let x = [0.02, -0.01];
    let xi = [0.7, -0.3];
    let cov = Covectors { theta: &[0.4, 0.9], xi: &xi, chi: [0.0, 0.0], nu: -1.0 };
    let at = |tau: f64| hamiltonian(&e, &q, &x, &JointControl::new(vec![vec![tau], vec![0.0]]), &cov).unwrap();
    let tau = 0.03;
    assert_abs_diff_eq!(at(tau) - at(0.0), -tau * tau / 2.0 + xi[0] * H * tau, epsilon = 1e-15);
}

#[test]
fn multiplexing_term_of_the_hamiltonian() {
    let e = satellites(2);
    let q = [rotation(0.0), rotation(0.0)];
    let chi = [0.8, -1.7];
    let cov = Covectors { theta: &[0.0, 0.0], xi: &[0.0, 0.0], chi, nu: 0.0 };
    let (a, b) = (0.04, -0.03);
    let value = hamiltonian(&e, &q, &[0.0, 0.0], &JointControl::new(vec![vec![a], vec![b]]), &cov).unwrap();
    let p = a * b;
    assert_abs_diff_eq!(value, chi[0] * p * (p + 1.0) + chi[1] * p * (p - 1.0), epsilon = 1e-16);
}

#[test]
fn control_gradient_at_zero_control() {
    let e = satellites(2);
    let q = [rotation(0.2), rotation(0.1)];
    let xi = [0.6, -1.1];
    for nu in [-1.0, 0.0] {
        let cov = Covectors { theta: &[0.3, 0.2], xi: &xi, chi: [2.0, 5.0], nu };
        let g = grad_h_control(&e, &q, &[0.01, 0.02], &JointControl::zeros(e.layout()), &cov).unwrap();
        assert_abs_diff_eq!(g[0], H * xi[0], epsilon = 1e-16);
        assert_abs_diff_eq!(g[1], H * xi[1], epsilon = 1e-16);
    }
}

#[test]
fn chart_violation_is_reported() {
    let e = satellites(1);
    let cov = Covectors { theta: &[0.0], xi: &[0.0], chi: [0.0, 0.0], nu: -1.0 };
    let err = hamiltonian(&e, &[rotation(0.0)], &[1.0 / H], &JointControl::new(vec![vec![0.0]]), &cov);
    assert!(matches!(err, Err(Error::ChartViolation { .. })));
}

fn finite_difference_check(e: &Ensemble, q: &[Matrix2<f64>], x: &[f64], u: &[f64], cov: &Covectors) -> f64 {
    let layout = e.layout();
    let at = |v: &[f64]| hamiltonian(e, q, x, &JointControl::from_flat(layout, v).unwrap(), cov).unwrap();
    let g = grad_h_control(e, q, x, &JointControl::from_flat(layout, u).unwrap(), cov).unwrap();
    let scale = g.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
    let mut worst: f64 = 0.0;
    for k in 0..u.len() {
        let step = 1e-6;
        let mut up = u.to_vec();
        let mut down = u.to_vec();
        up[k] += step;
        down[k] -= step;
        let fd = (at(&up) - at(&down)) / (2.0 * step);
        worst = worst.max((fd - g[k]).abs() / scale);
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn satellite_gradient_matches_differences(
        u in proptest::collection::vec(-0.05f64..0.05, 2),
        x in proptest::collection::vec(-0.1f64..0.1, 2),
        xi in proptest::collection::vec(-2.0f64..2.0, 2),
        chi in proptest::array::uniform2(-50.0f64..50.0),
        abnormal in any::<bool>(),
    ) {
        let e = satellites(2);
        let q = [rotation(0.4), rotation(-2.0)];
        let cov = Covectors { theta: &[0.5, -0.5], xi: &xi, chi, nu: if abnormal { 0.0 } else { -1.0 } };
        prop_assert!(finite_difference_check(&e, &q, &x, &u, &cov) < 1e-8);
    }

    #[test]
    fn vehicle_gradient_matches_differences(
        u in proptest::collection::vec(-0.05f64..0.05, 6),
        x in proptest::collection::vec(-0.1f64..0.1, 10),
        xi in proptest::collection::vec(-2.0f64..2.0, 10),
        angles in proptest::array::uniform2(-3.0f64..3.0),
        chi in proptest::array::uniform2(-50.0f64..50.0),
        abnormal in any::<bool>(),
    ) {
        let e = vehicles();
        let q = [rotation(angles[0]), rotation(angles[1])];
        let cov = Covectors { theta: &[0.1, 0.2], xi: &xi, chi, nu: if abnormal { 0.0 } else { -1.0 } };
        prop_assert!(finite_difference_check(&e, &q, &x, &u, &cov) < 1e-8);
    }
}

#[test]
fn satellite_adjoints_follow_the_closed_form() {
    let (scenario, traj) = solved(SINGLE);
    let nlp = transcribe(&scenario).unwrap();
    let n = traj.horizon();
    let mu: Vec<Vec<f64>> = (0..n).map(|t| vec![-0.01 * (t % 3) as f64]).collect();
    let seeds = TerminalSeeds { rotation: vec![0.7], state: vec![-0.2] };
    let adj = adjoint_backward(&nlp, &traj, &seeds, &mu, -1.0).unwrap();
    for t in 1..n {
        assert_eq!(adj.rho[t - 1], adj.rho[t]);
        let m = traj.states[t][0];
        let expected = H * adj.rho[t][0] / (1.0 - H * H * m * m).sqrt() + adj.xi[t][0] + mu[t - 1][0] * m;
        assert_abs_diff_eq!(adj.xi[t - 1][0], expected, epsilon = 1e-15);
    }
}

#[test]
fn adjoints_are_constant_without_forcing() {
    let (scenario, traj) = solved(SINGLE);
    let nlp = transcribe(&scenario).unwrap();
    let n = traj.horizon();
    let seeds = TerminalSeeds { rotation: vec![0.0], state: vec![1.3] };
    let adj = adjoint_backward(&nlp, &traj, &seeds, &vec![vec![0.0]; n], 0.0).unwrap();
    assert!(adj.xi.iter().all(|v| v[0] == 1.3));
    assert!(adj.rho.iter().all(|v| v[0] == 0.0));
}

#[test]
fn backward_sweep_agrees_with_the_gradient_sweep() {
    let text = r#"
name = "pair"
horizon = 12
step = 0.05
[[plant]]
kind = "uw_vehicle"
torque_bound = 0.025
force_bound = [0.05, 0.05]
momentum_bound = 0.085
velocity_bound = [0.02, 0.1]
initial = { angle_deg = 20.0, momentum = 0.01, velocity = [0.005, -0.01] }
goal = { angle_deg = 25.0 }
goal_weight = 3.0
[[plant]]
kind = "satellite"
torque_bound = 0.05
momentum_bound = 0.1
initial = { angle_deg = 0.0 }
"#;
    let scenario = Scenario::from_toml_str(text).unwrap();
    let nlp = transcribe(&scenario).unwrap();
    let u: Vec<f64> = (0..nlp.dim()).map(|k| 0.01 * ((k * 7) % 5) as f64 - 0.02).collect();
    let traj = nlp.trajectory(&u).unwrap();
    let ev = nlp.evaluate(&u).unwrap();
    let l = nlp.ensemble().constraint_dim();
    let mu: Vec<Vec<f64>> = (0..12).map(|t| (0..l).map(|k| -0.1 * ((t + k) % 4) as f64).collect()).collect();
    let mut cot = nlp.zero_cotangents();
    cot.objective = -1.0;
    cot.path = mu.concat();
    let pb = nlp.pullback(&u, &ev.rollout, &cot);
    let seeds = TerminalSeeds::zeros(nlp.ensemble());
    let adj = adjoint_backward(&nlp, &traj, &seeds, &mu, -1.0).unwrap();
    for t in 0..12 {
        for i in 0..2 {
            assert_abs_diff_eq!(adj.rho[t][i], pb.rho[t * 2 + i], epsilon = 1e-14);
        }
        for k in 0..6 {
            assert_abs_diff_eq!(adj.xi[t][k], pb.xi[t * 6 + k], epsilon = 1e-14);
        }
    }
}

#[test]
fn trivial_scenario_is_certified_with_zero_adjoints() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/trivial.toml")).unwrap();
    let (scenario, traj) = solved(&text);
    let (cert, report) = certify(&scenario, &traj, &scenario.verifier).unwrap();
    assert!(report.verdict, "{report:?}");
    assert_eq!(cert.nu, -1.0);
    for c in [report.adjoint, report.stationarity, report.slackness, report.sign, report.multiplexing] {
        assert!(c.value <= 1e-10);
    }
    assert!(cert.xi.iter().flatten().all(|v| v.abs() < 1e-10));
    assert!(cert.mu.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn single_satellite_satisfies_the_control_law() {
    let (scenario, traj) = solved(SINGLE);
    let (cert, report) = certify(&scenario, &traj, &scenario.verifier).unwrap();
    assert!(report.verdict, "{report:?}");
    assert!(report.transversality.skipped);
    let ids = report.satellite.unwrap();
    assert_eq!(ids.rho_drift, 0.0);
    assert!(ids.control_law < 1e-8);
    assert_eq!(estimate_multipliers(&scenario, &traj, &scenario.verifier).unwrap(), cert);
    assert_eq!(satellite_identities(&traj, &cert, &scenario).unwrap(), Some(ids));
}

#[test]
fn perturbed_control_is_rejected() {
    let (scenario, mut traj) = solved(SINGLE);
    let nlp = transcribe(&scenario).unwrap();
    traj.controls[20].blocks[0][0] += 0.01;
    let traj = nlp.trajectory(&nlp.from_controls(&traj.controls).unwrap()).unwrap();
    let (_, report) = certify(&scenario, &traj, &scenario.verifier).unwrap();
    assert!(!report.verdict);
    assert!(report.stationarity.value >= 1e-3, "{}", report.stationarity.value);
}

#[test]
fn multiplexing_residual_is_the_injected_step() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/trivial.toml")).unwrap();
    let (scenario, traj) = solved(&text);
    let nlp = transcribe(&scenario).unwrap();
    let mut controls = traj.controls.clone();
    controls[4] = JointControl::new(vec![vec![0.03], vec![-0.02]]);
    let bad = nlp.trajectory(&nlp.from_controls(&controls).unwrap()).unwrap();
    let (_, report) = certify(&scenario, &bad, &scenario.verifier).unwrap();
    let zt = z(&controls[4]);
    assert_abs_diff_eq!(report.multiplexing.value, (zt[0] * zt[0] + zt[1] * zt[1]).sqrt(), epsilon = 1e-12);
    assert!(!report.multiplexing.pass);
    assert_eq!(report.schedule[4], None);
}

#[test]
fn active_momentum_bound_gets_a_nonpositive_covector() {
    let text = r#"
name = "tight"
horizon = 60
step = 0.1
[[plant]]
kind = "satellite"
torque_bound = 0.05
momentum_bound = 0.04
initial = { angle_deg = 0.0, momentum = 0.0 }
terminal = { angle_deg = 10.0, momentum = 0.0 }
[solver]
starts = 1
"#;
    let (scenario, traj) = solved(text);
    let peak = traj.states.iter().map(|x| x[0].abs()).fold(0.0, f64::max);
    assert!((peak - 0.04).abs() < 1e-9, "constraint not active: peak {peak}");
    let (cert, report) = certify(&scenario, &traj, &scenario.verifier).unwrap();
    assert!(report.verdict, "{report:?}");
    assert!(cert.mu.iter().flatten().any(|m| *m < -1e-6));
    assert!(cert.mu.iter().flatten().all(|m| *m <= 0.0));
}

#[test]
fn goal_endpoint_checks_transversality() {
    let text = r#"
name = "goal"
horizon = 30
step = 0.1
[[plant]]
kind = "satellite"
torque_bound = 0.05
momentum_bound = 0.1
initial = { angle_deg = 0.0, momentum = 0.0 }
goal = { angle_deg = 5.0, momentum = 0.0 }
goal_weight = 50.0
[solver]
starts = 1
"#;
    let (scenario, traj) = solved(text);
    let (mut cert, report) = certify(&scenario, &traj, &scenario.verifier).unwrap();
    assert!(report.verdict, "{report:?}");
    assert!(!report.transversality.skipped);
    let last = cert.xi.len() - 1;
    cert.xi[last][0] += 1e-3;
    let report = check_conditions(&traj, &cert, &scenario, &scenario.verifier).unwrap();
    assert!(!report.transversality.pass);
}

#[test]
fn single_vehicle_is_certified() {
    let text = r#"
name = "vehicle"
horizon = 40
step = 0.05
[[plant]]
kind = "uw_vehicle"
torque_bound = 0.025
force_bound = [0.05, 0.05]
momentum_bound = 0.085
velocity_bound = [0.02, 0.1]
initial = {}
terminal = { angle_deg = 1.0, position = [0.002, 0.001], momentum = 0.0, velocity = [0.0, 0.0] }
[solver]
starts = 1
"#;
    let (scenario, traj) = solved(text);
    let (cert, report) = certify(&scenario, &traj, &scenario.verifier).unwrap();
    assert!(report.verdict, "{report:?}");
    assert!(report.satellite.is_none());
    let drift = cert.rho.iter().map(|r| (r[0] - cert.rho[0][0]).abs()).fold(0.0, f64::max);
    assert!(drift > 0.0);
}

#[test]
fn mismatched_certificate_is_rejected() {
    let (scenario, traj) = solved(SINGLE);
    let (mut cert, _) = certify(&scenario, &traj, &scenario.verifier).unwrap();
    cert.xi.pop();
    assert!(matches!(
        check_conditions(&traj, &cert, &scenario, &scenario.verifier),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn magnitude_ignores_the_uninformative_direction() {
    let cert = AdjointCertificate {
        nu: 0.0,
        chi: [2.0, 2.0],
        rho: vec![vec![0.0]],
        xi: vec![vec![0.0]],
        mu: vec![vec![0.0]],
        degenerate: false,
    };
    assert_eq!(cert.magnitude(), 0.0);
}

#[test]
fn layout_helpers_are_consistent() {
    let layout = ControlLayout::new(vec![ControlBox::symmetric(&[0.05]).unwrap()]);
    let dirs = estimate::cone_directions(&layout, &JointControl::new(vec![vec![0.07]]));
    assert_eq!(dirs, vec![crate::multiplex::ConeDirection::NonPositive]);
}
