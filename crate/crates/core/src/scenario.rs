//! TOML scenario files.
//!
//! ```toml
//! name = "two-satellites"
//! horizon = 150
//! step = 0.1
//! seed = 7
//!
//! [[plant]]
//! kind = "satellite"
//! torque_bound = 0.05
//! momentum_bound = 0.1
//! inertia = 800.0
//! initial = { angle_deg = 0.0, momentum = 0.0 }
//! terminal = { angle_deg = 10.0, momentum = 0.005 }
//! ```
//!
//! Each plant takes either a `terminal` table (fixed endpoint), a `goal` table
//! with `goal_weight` (quadratic terminal cost), or neither (free endpoint).
//! Angles are given as `angle` in radians or `angle_deg` in degrees.

use std::path::Path;

use nalgebra::Matrix2;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::liegroup::{rotation, CHART_MARGIN};
use crate::optimizer::SolveOptions;
use crate::plants::{Ensemble, Plant, PlantModel, SatelliteModel, UwVehicleModel, CHART_GUARD};
use crate::pmp::VerifierTolerances;

/// Boundary tolerance on state constraints for initial and terminal states.
const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    horizon: usize,
    step: f64,
    #[serde(default)]
    seed: u64,
    #[serde(rename = "plant")]
    plants: Vec<PlantSpec>,
    #[serde(default)]
    solver: SolveOptions,
    #[serde(default)]
    verifier: VerifierTolerances,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum PlantSpec {
    Satellite(SatelliteSpec),
    UwVehicle(UwSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SatelliteSpec {
    torque_bound: f64,
    momentum_bound: f64,
    inertia: Option<f64>,
    initial: SatelliteState,
    terminal: Option<SatelliteState>,
    goal: Option<SatelliteState>,
    goal_weight: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SatelliteState {
    angle: Option<f64>,
    angle_deg: Option<f64>,
    #[serde(default)]
    momentum: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct UwSpec {
    torque_bound: f64,
    force_bound: [f64; 2],
    momentum_bound: f64,
    velocity_bound: [f64; 2],
    mass: Option<[[f64; 2]; 2]>,
    initial: UwStateSpec,
    terminal: Option<UwStateSpec>,
    goal: Option<UwStateSpec>,
    goal_weight: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct UwStateSpec {
    angle: Option<f64>,
    angle_deg: Option<f64>,
    #[serde(default)]
    momentum: f64,
    #[serde(default)]
    position: [f64; 2],
    #[serde(default)]
    velocity: [f64; 2],
}

fn resolve_angle(angle: Option<f64>, angle_deg: Option<f64>) -> Result<f64> {
    match (angle, angle_deg) {
        (Some(_), Some(_)) => Err(Error::InvalidScenario(
            "give either angle or angle_deg, not both".into(),
        )),
        (Some(a), None) => Ok(a),
        (None, Some(d)) => Ok(d.to_radians()),
        (None, None) => Ok(0.0),
    }
}

/// Rotation angle and Euclidean state of one plant at a boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    pub angle: f64,
    pub state: Vec<f64>,
}

impl Boundary {
    pub fn rotation(&self) -> Matrix2<f64> {
        rotation(self.angle)
    }
}

impl From<&SatelliteState> for Boundary {
    fn from(s: &SatelliteState) -> Self {
        Boundary {
            angle: 0.0,
            state: vec![s.momentum],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Endpoint {
    /// Both rotation and Euclidean state are prescribed at `t = N`.
    Fixed(Boundary),
    /// Quadratic terminal cost `weight · ½ ‖residual‖²` toward `target`.
    Goal { target: Boundary, weight: f64 },
    /// No terminal condition.
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub plant: Plant,
    pub initial: Boundary,
    pub endpoint: Endpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub horizon: usize,
    pub step: f64,
    pub seed: u64,
    pub plants: Vec<PlantConfig>,
    pub solver: SolveOptions,
    pub verifier: VerifierTolerances,
}

fn endpoint(
    terminal: Option<Boundary>,
    goal: Option<Boundary>,
    weight: Option<f64>,
    index: usize,
) -> Result<Endpoint> {
    match (terminal, goal, weight) {
        (Some(_), Some(_), _) => Err(Error::InvalidScenario(format!(
            "plant {index}: terminal and goal are mutually exclusive"
        ))),
        (Some(b), None, None) => Ok(Endpoint::Fixed(b)),
        (None, Some(b), Some(w)) if w > 0.0 && w.is_finite() => Ok(Endpoint::Goal { target: b, weight: w }),
        (None, Some(_), _) => Err(Error::InvalidScenario(format!(
            "plant {index}: goal needs a positive goal_weight"
        ))),
        (_, None, Some(_)) => Err(Error::InvalidScenario(format!(
            "plant {index}: goal_weight given without a goal"
        ))),
        (None, None, None) => Ok(Endpoint::Free),
    }
}

fn satellite_boundary(s: &SatelliteState) -> Result<Boundary> {
    Ok(Boundary {
        angle: resolve_angle(s.angle, s.angle_deg)?,
        ..Boundary::from(s)
    })
}

fn uw_boundary(s: &UwStateSpec) -> Result<Boundary> {
    Ok(Boundary {
        angle: resolve_angle(s.angle, s.angle_deg)?,
        state: vec![
            s.momentum,
            s.position[0],
            s.position[1],
            s.velocity[0],
            s.velocity[1],
        ],
    })
}

fn invalid(e: Error) -> Error {
    match e {
        Error::InvalidScenario(_) => e,
        other => Error::InvalidScenario(other.to_string()),
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        Self::from_file(file).map_err(invalid)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidScenario(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn from_file(file: ScenarioFile) -> Result<Self> {
        if file.horizon < 1 {
            return Err(Error::InvalidScenario("horizon must be at least 1".into()));
        }
        if !(file.step > 0.0) || !file.step.is_finite() {
            return Err(Error::InvalidScenario("step must be positive".into()));
        }
        if file.plants.is_empty() {
            return Err(Error::InvalidScenario("at least one [[plant]] is required".into()));
        }
        let h = file.step;
        let mut plants = Vec::with_capacity(file.plants.len());
        for (index, spec) in file.plants.iter().enumerate() {
            let config = match spec {
                PlantSpec::Satellite(s) => {
                    let mut model = SatelliteModel::new(h, s.torque_bound, s.momentum_bound)?;
                    if let Some(j) = s.inertia {
                        model = model.with_inertia(j);
                    }
                    PlantConfig {
                        plant: Plant::Satellite(model),
                        initial: satellite_boundary(&s.initial)?,
                        endpoint: endpoint(
                            s.terminal.as_ref().map(satellite_boundary).transpose()?,
                            s.goal.as_ref().map(satellite_boundary).transpose()?,
                            s.goal_weight,
                            index,
                        )?,
                    }
                }
                PlantSpec::UwVehicle(u) => {
                    let mass = u
                        .mass
                        .map(|m| Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]))
                        .unwrap_or_else(Matrix2::identity);
                    let model = UwVehicleModel::new(
                        h,
                        [u.torque_bound, u.force_bound[0], u.force_bound[1]],
                        [u.momentum_bound, u.velocity_bound[0], u.velocity_bound[1]],
                        mass,
                    )?;
                    PlantConfig {
                        plant: Plant::UwVehicle(model),
                        initial: uw_boundary(&u.initial)?,
                        endpoint: endpoint(
                            u.terminal.as_ref().map(uw_boundary).transpose()?,
                            u.goal.as_ref().map(uw_boundary).transpose()?,
                            u.goal_weight,
                            index,
                        )?,
                    }
                }
            };
            plants.push(config);
        }
        let mut solver = file.solver;
        solver.seed = file.seed;
        solver.validate()?;
        file.verifier.validate()?;
        let scenario = Scenario {
            name: file.name,
            horizon: file.horizon,
            step: h,
            seed: file.seed,
            plants,
            solver,
            verifier: file.verifier,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Checks boundary states against the state constraints and the chart.
    pub fn validate(&self) -> Result<()> {
        let limit = std::f64::consts::PI - CHART_MARGIN;
        for (i, cfg) in self.plants.iter().enumerate() {
            let p = &cfg.plant;
            let check = |label: &str, b: &Boundary| -> Result<()> {
                if b.state.len() != p.euclid_dim() {
                    return Err(Error::InvalidScenario(format!(
                        "plant {i}: {label} state has {} entries, expected {}",
                        b.state.len(),
                        p.euclid_dim()
                    )));
                }
                if !b.angle.is_finite() || b.state.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidScenario(format!(
                        "plant {i}: {label} state is not finite"
                    )));
                }
                let mut g = vec![0.0; p.constraint_dim()];
                p.constraints(&b.state, &mut g);
                if let Some(k) = g.iter().position(|&v| v > BOUNDARY_TOL) {
                    return Err(Error::InvalidScenario(format!(
                        "plant {i}: {label} state violates state constraint {k} ({:.3e} > 0)",
                        g[k]
                    )));
                }
                if p.chart_load(&b.state) >= CHART_GUARD {
                    return Err(Error::InvalidScenario(format!(
                        "plant {i}: {label} state leaves the chart of the group step"
                    )));
                }
                Ok(())
            };
            check("initial", &cfg.initial)?;
            match &cfg.endpoint {
                Endpoint::Fixed(b) | Endpoint::Goal { target: b, .. } => {
                    check("terminal", b)?;
                    let wrapped = b.angle.sin().atan2(b.angle.cos());
                    if wrapped.abs() >= limit {
                        return Err(Error::InvalidScenario(format!(
                            "plant {i}: terminal angle lies outside the log chart"
                        )));
                    }
                }
                Endpoint::Free => {}
            }
        }
        Ok(())
    }

    pub fn ensemble(&self) -> Ensemble {
        Ensemble::new(self.plants.iter().map(|c| c.plant.clone()).collect())
    }

    pub fn initial_rotations(&self) -> Vec<Matrix2<f64>> {
        self.plants.iter().map(|c| c.initial.rotation()).collect()
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.plants
            .iter()
            .flat_map(|c| c.initial.state.iter().copied())
            .collect()
    }

    /// True when every plant has a fixed terminal condition.
    pub fn fixed_endpoint(&self) -> bool {
        self.plants
            .iter()
            .all(|c| matches!(c.endpoint, Endpoint::Fixed(_)))
    }
}
