//! Direct transcription of a scenario into a finite-dimensional program over
//! the stacked controls, plus the reverse sweep that differentiates it.

use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::liegroup::block_angle;
use crate::multiplex::{z, z_gradient, ControlLayout, JointControl};
use crate::plants::{joint_rollout, Ensemble, JointTrajectory, PlantModel, CHART_GUARD};
use crate::scenario::{Endpoint, Scenario};

/// Wraps an angle difference into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    a.sin().atan2(a.cos())
}

#[derive(Debug, Clone, PartialEq)]
enum Terminal {
    Fixed { angle: f64, state: Vec<f64> },
    Goal { angle: f64, state: Vec<f64>, weight: f64 },
    Free,
}

/// The transcribed program
///
/// ```text
/// minimise   Σ_t ½‖U_t‖² + Σ_goal ½ weight ‖terminal residual‖²
/// subject to terminal residuals of fixed-endpoint plants = 0
///            w_N = Σ_t z(U_t) = 0                (two or more plants)
///            g(x_t) ≤ 0                          for t = 1..N
///            U_t in the box product
/// ```
///
/// The decision vector is the row-major stack of `U_0, …, U_{N−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscribedNlp {
    ensemble: Ensemble,
    q0: Vec<Matrix2<f64>>,
    x0: Vec<f64>,
    horizon: usize,
    terminals: Vec<Terminal>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// First equality row of each fixed-endpoint plant.
    terminal_rows: Vec<Option<usize>>,
    equality_count: usize,
}

/// Forward pass over flat storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    plants: usize,
    state_dim: usize,
    /// `rotations[t * P + i]`.
    pub rotations: Vec<Matrix2<f64>>,
    /// `states[t * n .. (t + 1) * n]`.
    pub states: Vec<f64>,
}

impl Rollout {
    pub fn rotation(&self, t: usize, i: usize) -> &Matrix2<f64> {
        &self.rotations[t * self.plants + i]
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }
}

/// Values of every part of the program at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rollout: Rollout,
    pub objective: f64,
    pub equalities: Vec<f64>,
    /// `g(x_t)` stacked as `(t − 1) · L + k` for `t = 1..N`.
    pub inequalities: Vec<f64>,
    /// `z(U_t)` for `t = 0..N`.
    pub z_steps: Vec<[f64; 2]>,
}

/// Cotangent data pulled back through the rollout.
///
/// Rotation cotangents are left-trivialised scalars, one per plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Cotangents {
    /// Weight on the running cost and on goal terminal costs.
    pub objective: f64,
    pub rotation: Vec<f64>,
    pub state: Vec<f64>,
    /// Weights on `g(x_t)`, indexed like [`Evaluation::inequalities`].
    pub path: Vec<f64>,
    /// Weight on `z(U_t)` shared by every step.
    pub z_weight: [f64; 2],
    /// Optional additional per-step weight on `z(U_t)`.
    pub z_steps: Option<Vec<[f64; 2]>>,
}

/// Result of a reverse sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Pullback {
    /// Gradient with respect to the flat control vector.
    pub grad: Vec<f64>,
    /// `rho[t * P + i]`: cotangent of plant `i`'s rotation at `t + 1`.
    pub rho: Vec<f64>,
    /// `xi[t * n ..]`: cotangent of the stacked state at `t + 1`.
    pub xi: Vec<f64>,
}

impl TranscribedNlp {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let ensemble = scenario.ensemble();
        let layout = ensemble.layout();
        let horizon = scenario.horizon;
        let lower: Vec<f64> = (0..horizon).flat_map(|_| layout.lower_flat()).collect();
        let upper: Vec<f64> = (0..horizon).flat_map(|_| layout.upper_flat()).collect();
        let mut terminals = Vec::new();
        let mut terminal_rows = Vec::new();
        let mut rows = 0;
        for cfg in &scenario.plants {
            match &cfg.endpoint {
                Endpoint::Fixed(b) => {
                    terminal_rows.push(Some(rows));
                    rows += 1 + b.state.len();
                    terminals.push(Terminal::Fixed {
                        angle: b.angle,
                        state: b.state.clone(),
                    });
                }
                Endpoint::Goal { target, weight } => {
                    terminal_rows.push(None);
                    terminals.push(Terminal::Goal {
                        angle: target.angle,
                        state: target.state.clone(),
                        weight: *weight,
                    });
                }
                Endpoint::Free => {
                    terminal_rows.push(None);
                    terminals.push(Terminal::Free);
                }
            }
        }
        if ensemble.len() >= 2 {
            rows += 2;
        }
        Ok(TranscribedNlp {
            q0: scenario.initial_rotations(),
            x0: scenario.initial_state(),
            ensemble,
            horizon,
            terminals,
            lower,
            upper,
            terminal_rows,
            equality_count: rows,
        })
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn layout(&self) -> &ControlLayout {
        self.ensemble.layout()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Controls per step.
    pub fn step_dim(&self) -> usize {
        self.layout().total_dim()
    }

    pub fn dim(&self) -> usize {
        self.horizon * self.step_dim()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn initial_rotations(&self) -> &[Matrix2<f64>] {
        &self.q0
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.x0
    }

    pub fn equality_count(&self) -> usize {
        self.equality_count
    }

    /// True when the last two equality rows are the auxiliary `w_N` rows.
    pub fn has_aux_rows(&self) -> bool {
        self.ensemble.len() >= 2
    }

    /// Index of the first `w_N` row.
    pub fn aux_row(&self) -> Option<usize> {
        self.has_aux_rows().then(|| self.equality_count - 2)
    }

    /// First equality row (angle residual) of plant `i`, if its endpoint is fixed.
    pub fn terminal_row(&self, i: usize) -> Option<usize> {
        self.terminal_rows[i]
    }

    /// Goal weight of plant `i`, if it has a terminal cost.
    pub fn goal_weight(&self, i: usize) -> Option<f64> {
        match self.terminals[i] {
            Terminal::Goal { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub fn inequality_count(&self) -> usize {
        self.horizon * self.ensemble.constraint_dim()
    }

    pub fn to_controls(&self, u: &[f64]) -> Vec<JointControl> {
        let m = self.step_dim();
        u.chunks(m)
            .map(|c| JointControl::from_flat(self.layout(), c).expect("layout-consistent chunk"))
            .collect()
    }

    pub fn from_controls(&self, controls: &[JointControl]) -> Result<Vec<f64>> {
        if controls.len() != self.horizon {
            return Err(Error::DimensionMismatch {
                expected: self.horizon,
                got: controls.len(),
            });
        }
        let mut out = Vec::with_capacity(self.dim());
        for c in controls {
            c.check_layout(self.layout())?;
            out.extend(c.to_flat());
        }
        Ok(out)
    }

    /// Full joint trajectory for reporting.
    pub fn trajectory(&self, u: &[f64]) -> Result<JointTrajectory> {
        joint_rollout(&self.ensemble, &self.q0, &self.x0, &self.to_controls(u))
    }

    fn check_dim(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: u.len(),
            });
        }
        Ok(())
    }

    pub fn rollout(&self, u: &[f64]) -> Result<Rollout> {
        self.check_dim(u)?;
        let p = self.ensemble.len();
        let n = self.ensemble.state_dim();
        let m = self.step_dim();
        let layout = self.layout();
        let mut rotations = Vec::with_capacity((self.horizon + 1) * p);
        let mut states = Vec::with_capacity((self.horizon + 1) * n);
        rotations.extend_from_slice(&self.q0);
        states.extend_from_slice(&self.x0);
        let mut next = vec![0.0; n];
        for t in 0..self.horizon {
            let ut = &u[t * m..(t + 1) * m];
            let xt = &states[t * n..(t + 1) * n];
            for (i, plant) in self.ensemble.plants().iter().enumerate() {
                let xi = &xt[self.ensemble.state_range(i)];
                let load = plant.chart_load(xi);
                if !(load < CHART_GUARD) {
                    return Err(Error::ChartViolation {
                        plant: i,
                        step: t,
                        value: load,
                    });
                }
                let q = rotations[t * p + i];
                rotations.push(q * plant.group_step(xi));
                plant.euclid_step(&q, xi, &ut[layout.range(i)], &mut next[self.ensemble.state_range(i)]);
            }
            states.extend_from_slice(&next);
        }
        Ok(Rollout {
            plants: p,
            state_dim: n,
            rotations,
            states,
        })
    }

    /// Terminal residual `(wrap(θ_N − θ̄), x_N − x̄)` of plant `i` against a target.
    fn terminal_residual(&self, r: &Rollout, i: usize, angle: f64, state: &[f64]) -> (f64, Vec<f64>) {
        let xn = &r.state(self.horizon)[self.ensemble.state_range(i)];
        residual_against(r.rotation(self.horizon, i), xn, angle, state)
    }

    /// Residual of plant `i`'s terminal rotation and state against its fixed
    /// target or goal; `None` for a free endpoint.
    pub fn target_residual(&self, i: usize, q: &Matrix2<f64>, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        match &self.terminals[i] {
            Terminal::Fixed { angle, state } | Terminal::Goal { angle, state, .. } => {
                Some(residual_against(q, x, *angle, state))
            }
            Terminal::Free => None,
        }
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<Evaluation> {
        let rollout = self.rollout(u)?;
        let m = self.step_dim();
        let mut objective = 0.5 * u.iter().map(|v| v * v).sum::<f64>();
        let mut equalities = Vec::with_capacity(self.equality_count);
        for (i, term) in self.terminals.iter().enumerate() {
            match term {
                Terminal::Fixed { angle, state } => {
                    let (a, s) = self.terminal_residual(&rollout, i, *angle, state);
                    equalities.push(a);
                    equalities.extend(s);
                }
                Terminal::Goal { angle, state, weight } => {
                    let (a, s) = self.terminal_residual(&rollout, i, *angle, state);
                    objective += 0.5 * weight * (a * a + s.iter().map(|v| v * v).sum::<f64>());
                }
                Terminal::Free => {}
            }
        }
        let mut z_steps = Vec::with_capacity(self.horizon);
        let mut w = [0.0, 0.0];
        for ut in u.chunks(m) {
            let zt = z(&JointControl::from_flat(self.layout(), ut)?);
            w[0] += zt[0];
            w[1] += zt[1];
            z_steps.push(zt);
        }
        if self.has_aux_rows() {
            equalities.extend(w);
        }
        let l = self.ensemble.constraint_dim();
        let mut inequalities = Vec::with_capacity(self.horizon * l);
        for t in 1..=self.horizon {
            inequalities.extend(self.ensemble.constraints(rollout.state(t)));
        }
        Ok(Evaluation {
            rollout,
            objective,
            equalities,
            inequalities,
            z_steps,
        })
    }

    /// Zero cotangents of the right shapes.
    pub fn zero_cotangents(&self) -> Cotangents {
        Cotangents {
            objective: 0.0,
            rotation: vec![0.0; self.ensemble.len()],
            state: vec![0.0; self.ensemble.state_dim()],
            path: vec![0.0; self.inequality_count()],
            z_weight: [0.0, 0.0],
            z_steps: None,
        }
    }

    /// Adds `Σ_r weights[r] ∂h_r` into the cotangents.
    pub fn seed_equalities(&self, weights: &[f64], cot: &mut Cotangents) {
        assert_eq!(weights.len(), self.equality_count);
        for i in 0..self.ensemble.len() {
            if let Some(row) = self.terminal_rows[i] {
                cot.rotation[i] += weights[row];
                for (k, s) in self.ensemble.state_range(i).enumerate() {
                    cot.state[s] += weights[row + 1 + k];
                }
            }
        }
        if let Some(row) = self.aux_row() {
            cot.z_weight[0] += weights[row];
            cot.z_weight[1] += weights[row + 1];
        }
    }

    /// Reverse sweep: gradient of
    /// `objective · J + ⟨rotation, log(q̄⁻¹ q_N)⟩ + ⟨state, x_N⟩ + Σ path·g + Σ ⟨z weights, z(U_t)⟩`.
    ///
    /// `rollout` must come from the same `u`.
    pub fn pullback(&self, u: &[f64], rollout: &Rollout, cot: &Cotangents) -> Pullback {
        let p = self.ensemble.len();
        let n = self.ensemble.state_dim();
        let m = self.step_dim();
        let l = self.ensemble.constraint_dim();
        let horizon = self.horizon;
        let layout = self.layout();

        let mut q_bar = cot.rotation.clone();
        let mut x_bar = cot.state.clone();
        if cot.objective != 0.0 {
            for (i, term) in self.terminals.iter().enumerate() {
                if let Terminal::Goal { angle, state, weight } = term {
                    let (a, s) = self.terminal_residual(rollout, i, *angle, state);
                    let scale = cot.objective * weight;
                    q_bar[i] += scale * a;
                    for (k, idx) in self.ensemble.state_range(i).enumerate() {
                        x_bar[idx] += scale * s[k];
                    }
                }
            }
        }
        if horizon >= 1 {
            self.add_path(rollout, horizon, &cot.path[(horizon - 1) * l..horizon * l], &mut x_bar);
        }

        let mut grad = vec![0.0; u.len()];
        let mut rho = vec![0.0; horizon * p];
        let mut xi = vec![0.0; horizon * n];
        let mut new_x_bar = vec![0.0; n];
        for t in (0..horizon).rev() {
            rho[t * p..(t + 1) * p].copy_from_slice(&q_bar);
            xi[t * n..(t + 1) * n].copy_from_slice(&x_bar);
            let ut = &u[t * m..(t + 1) * m];
            let xt = rollout.state(t);
            let gt = &mut grad[t * m..(t + 1) * m];
            new_x_bar.iter_mut().for_each(|v| *v = 0.0);
            for (i, plant) in self.ensemble.plants().iter().enumerate() {
                let sr = self.ensemble.state_range(i);
                let cr = layout.range(i);
                plant.increment_vjp(&xt[sr.clone()], q_bar[i], &mut new_x_bar[sr.clone()]);
                plant.euclid_vjp(
                    rollout.rotation(t, i),
                    &xt[sr.clone()],
                    &ut[cr.clone()],
                    &x_bar[sr.clone()],
                    &mut q_bar[i],
                    &mut new_x_bar[sr],
                    &mut gt[cr],
                );
            }
            if cot.objective != 0.0 {
                for (g, v) in gt.iter_mut().zip(ut) {
                    *g += cot.objective * v;
                }
            }
            let mut zw = cot.z_weight;
            if let Some(steps) = &cot.z_steps {
                zw[0] += steps[t][0];
                zw[1] += steps[t][1];
            }
            if p >= 2 && (zw[0] != 0.0 || zw[1] != 0.0) {
                let ctl = JointControl::from_flat(layout, ut).expect("layout-consistent chunk");
                let zg = z_gradient(&ctl, zw);
                for (i, block) in zg.iter().enumerate() {
                    for (g, v) in gt[layout.range(i)].iter_mut().zip(block) {
                        *g += v;
                    }
                }
            }
            std::mem::swap(&mut x_bar, &mut new_x_bar);
            if t >= 1 {
                self.add_path(rollout, t, &cot.path[(t - 1) * l..t * l], &mut x_bar);
            }
        }
        Pullback { grad, rho, xi }
    }

    fn add_path(&self, rollout: &Rollout, t: usize, weights: &[f64], x_bar: &mut [f64]) {
        if weights.iter().all(|w| *w == 0.0) {
            return;
        }
        let xt = rollout.state(t);
        for (i, plant) in self.ensemble.plants().iter().enumerate() {
            let sr = self.ensemble.state_range(i);
            plant.constraints_vjp(
                &xt[sr.clone()],
                &weights[self.ensemble.constraint_range(i)],
                &mut x_bar[sr],
            );
        }
    }

    /// Gradient of one equality row.
    pub fn equality_gradient(&self, u: &[f64], rollout: &Rollout, row: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.equality_count];
        w[row] = 1.0;
        let mut cot = self.zero_cotangents();
        self.seed_equalities(&w, &mut cot);
        self.pullback(u, rollout, &cot).grad
    }

    /// Gradient of one inequality row.
    pub fn inequality_gradient(&self, u: &[f64], rollout: &Rollout, row: usize) -> Vec<f64> {
        let mut cot = self.zero_cotangents();
        cot.path[row] = 1.0;
        self.pullback(u, rollout, &cot).grad
    }

    /// Gradient of the objective alone.
    pub fn objective_gradient(&self, u: &[f64], rollout: &Rollout) -> Vec<f64> {
        let mut cot = self.zero_cotangents();
        cot.objective = 1.0;
        self.pullback(u, rollout, &cot).grad
    }

    /// Magnitude `b · ‖∂x_c(N)/∂U‖` at `u` for every constraint `½(x_c² − b²)`,
    /// in stacked constraint order.
    pub fn inequality_scales(&self, u: &[f64], rollout: &Rollout) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.ensemble.constraint_dim());
        for (i, plant) in self.ensemble.plants().iter().enumerate() {
            let base = self.ensemble.state_range(i).start;
            for (c, bound) in plant.constraint_shape() {
                let mut cot = self.zero_cotangents();
                cot.state[base + c] = 1.0;
                let g = self.pullback(u, rollout, &cot).grad;
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                out.push((bound * norm).max(f64::MIN_POSITIVE.sqrt()));
            }
        }
        out
    }
}

fn residual_against(q: &Matrix2<f64>, x: &[f64], angle: f64, state: &[f64]) -> (f64, Vec<f64>) {
    let rel = crate::liegroup::rotation(angle).transpose() * q;
    (block_angle(&rel), x.iter().zip(state).map(|(a, b)| a - b).collect())
}

/// Transcribes a validated scenario.
pub fn transcribe(scenario: &Scenario) -> Result<TranscribedNlp> {
    TranscribedNlp::new(scenario)
}
