//! The three subcommands. Each returns the process exit code on completion;
//! errors are mapped to codes by [`exit_code`].

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use lieplex::io::{read_controls, read_trajectory, write_controls, write_trajectory};
use lieplex::multiplex::{star_membership, z, MEMBERSHIP_TOL};
use lieplex::optimizer::{solve as run_solver, transcribe, SeedReport, SolveStatus};
use lieplex::plants::joint_rollout_partial;
use lieplex::pmp::certify;
use lieplex::scenario::Scenario;
use lieplex::{Error, Result};
use serde::Serialize;

pub const OK: i32 = 0;
pub const INVALID: i32 = 2;
pub const NOT_CONVERGED: i32 = 3;
pub const VERDICT_FAIL: i32 = 4;
pub const CHART_VIOLATION: i32 = 5;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ChartViolation { .. } => CHART_VIOLATION,
        Error::Io(_) => 1,
        _ => INVALID,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

fn load(path: &Path) -> Result<(Scenario, String)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok((Scenario::from_toml_str(&text)?, text))
}

#[derive(Serialize)]
struct SolveSummary {
    scenario: String,
    status: SolveStatus,
    objective: f64,
    equality_violation: f64,
    inequality_violation: f64,
    multiplexing_residual: f64,
    stationarity: f64,
    best_seed: u64,
    seeds: Vec<SeedReport>,
}

pub fn solve(scenario_path: &Path, out: &Path, seed: Option<u64>) -> Result<i32> {
    let (mut scenario, text) = load(scenario_path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
        scenario.solver.seed = seed;
    }
    let nlp = transcribe(&scenario)?;
    let result = run_solver(&nlp, &scenario.solver)?;
    make_dir(out)?;
    let ensemble = scenario.ensemble();

    let mut file = create(&out.join("trajectory.csv"))?;
    write_trajectory(&mut file, &ensemble, &result.trajectory)?;
    file.flush().map_err(|e| Error::Io(e.to_string()))?;
    let mut file = create(&out.join("controls.csv"))?;
    write_controls(&mut file, &ensemble, &result.trajectory.controls)?;
    file.flush().map_err(|e| Error::Io(e.to_string()))?;
    fs::write(out.join("scenario.toml"), text).map_err(|e| Error::Io(e.to_string()))?;
    write_toml(
        &out.join("summary.toml"),
        &SolveSummary {
            scenario: scenario.name.clone(),
            status: result.status,
            objective: result.objective,
            equality_violation: result.equality_violation,
            inequality_violation: result.inequality_violation,
            multiplexing_residual: result.multiplexing_residual,
            stationarity: result.stationarity,
            best_seed: result.best_seed,
            seeds: result.seeds,
        },
    )?;
    log::info!("{}: {:?}, objective {:.6e}", scenario.name, result.status, result.objective);
    Ok(match result.status {
        SolveStatus::Converged => OK,
        SolveStatus::NotConverged => NOT_CONVERGED,
    })
}

pub fn verify(scenario_path: &Path, trajectory: &Path, tol_scale: f64, report: Option<&Path>) -> Result<i32> {
    if !(tol_scale > 0.0 && tol_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("tolerance scale must be positive, got {tol_scale}")));
    }
    let (scenario, _) = load(scenario_path)?;
    let traj = read_trajectory(open(trajectory)?, &scenario.ensemble())?;
    if traj.horizon() != scenario.horizon {
        return Err(Error::DimensionMismatch {
            expected: scenario.horizon + 1,
            got: traj.states.len(),
        });
    }
    let tols = scenario.verifier.scaled(tol_scale);
    let (_, pmp) = certify(&scenario, &traj, &tols)?;
    let text = toml::to_string(&pmp).map_err(|e| Error::Io(e.to_string()))?;
    match report {
        Some(path) => fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    if !pmp.verdict {
        eprintln!(
            "verdict: fail (stationarity {:.3e} at step {})",
            pmp.stationarity.value, pmp.worst_step
        );
    }
    Ok(if pmp.verdict { OK } else { VERDICT_FAIL })
}

#[derive(Serialize)]
struct SimulateSummary {
    scenario: String,
    /// Steps actually simulated; less than the horizon after a chart violation.
    steps: usize,
    multiplexed: bool,
    /// Steps whose controls are outside the admissible star-shaped set.
    violating_steps: Vec<usize>,
    /// Final accumulator value; zero for a multiplexed control sequence.
    final_w: [f64; 2],
    nonzero_w: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    chart_violation: Option<String>,
}

pub fn simulate(scenario_path: &Path, controls_path: &Path, out: &Path) -> Result<i32> {
    let (scenario, _) = load(scenario_path)?;
    let ensemble = scenario.ensemble();
    let controls = read_controls(open(controls_path)?, &ensemble)?;
    if controls.len() != scenario.horizon {
        return Err(Error::Parse(format!(
            "expected {} control rows, found {}",
            scenario.horizon,
            controls.len()
        )));
    }
    let (traj, failure) = joint_rollout_partial(
        &ensemble,
        &scenario.initial_rotations(),
        &scenario.initial_state(),
        &controls,
    )?;
    make_dir(out)?;
    let mut file = create(&out.join("trajectory.csv"))?;
    write_trajectory(&mut file, &ensemble, &traj)?;
    file.flush().map_err(|e| Error::Io(e.to_string()))?;

    let violating_steps: Vec<usize> = controls
        .iter()
        .enumerate()
        .filter(|(_, u)| !star_membership(ensemble.layout(), u, MEMBERSHIP_TOL).member || z(u) != [0.0, 0.0])
        .map(|(t, _)| t)
        .collect();
    let final_w = traj.aux.last().map_or([0.0; 2], |a| a.w);
    write_toml(
        &out.join("summary.toml"),
        &SimulateSummary {
            scenario: scenario.name.clone(),
            steps: traj.horizon(),
            multiplexed: violating_steps.is_empty(),
            violating_steps,
            final_w,
            nonzero_w: traj.aux.iter().any(|a| a.w != [0.0, 0.0]),
            chart_violation: failure.as_ref().map(ToString::to_string),
        },
    )?;
    match failure {
        Some(err) => {
            eprintln!("error: {err}");
            Ok(exit_code(&err))
        }
        None => Ok(OK),
    }
}
