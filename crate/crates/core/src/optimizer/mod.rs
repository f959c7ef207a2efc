//! Direct transcription and a self-contained augmented Lagrangian solver.
//!
//! A multi-plant solve runs in two phases. The first phase solves the full
//! program with an extra quadratic aid on every `z(U_t)`, which drives the
//! controls towards a single active plant per step. The dominant plant at
//! each step then defines a schedule, the other plants' controls are pinned
//! to zero, and the second phase solves the scheduled program to tight
//! tolerances. Pinned controls make every `z(U_t)` vanish exactly, so the
//! `w_N` rows hold identically in the second phase.

mod alm;
mod nlp;
mod polish;
pub mod spg;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use alm::{AlmOutcome, AlmProblem, AlmSettings, Multipliers};
pub use nlp::{transcribe, wrap_angle, Cotangents, Evaluation, Pullback, Rollout, TranscribedNlp};
pub use polish::PolishOutcome;

use crate::error::{Error, Result};
use crate::multiplex::{star_membership, MEMBERSHIP_TOL};
use crate::plants::JointTrajectory;

/// Solver settings; every field has a default and may be overridden in the
/// `[solver]` table of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Number of random starts.
    pub starts: usize,
    /// Base seed; start `k` uses `seed + k`. Taken from the scenario's top-level `seed`.
    #[serde(skip)]
    pub seed: u64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Bound on the projected Lagrangian gradient at convergence.
    pub inner_tolerance: f64,
    /// Bound on equality residuals and inequality violations at convergence.
    pub feasibility_tolerance: f64,
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    /// Weight of the per-step multiplexing aid in the first stage.
    pub multiplex_penalty: f64,
    /// The aid is multiplied by ten at each further stage.
    pub multiplex_stages: usize,
    /// Initial controls are uniform in this fraction of each box.
    pub initial_spread: f64,
    pub polish_iterations: usize,
    /// Rounds of switching-function schedule improvement after the second phase.
    pub schedule_refinements: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            starts: 8,
            seed: 0,
            outer_iterations: 40,
            inner_iterations: 3000,
            inner_tolerance: 1e-6,
            feasibility_tolerance: 1e-9,
            penalty_initial: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e8,
            multiplex_penalty: 1.0,
            multiplex_stages: 3,
            initial_spread: 0.3,
            polish_iterations: 60,
            schedule_refinements: 2,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("inner_tolerance", self.inner_tolerance),
            ("feasibility_tolerance", self.feasibility_tolerance),
            ("penalty_initial", self.penalty_initial),
            ("penalty_max", self.penalty_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidScenario(format!("solver.{name} must be positive")));
            }
        }
        if self.starts == 0 || self.outer_iterations == 0 || self.inner_iterations == 0 {
            return Err(Error::InvalidScenario(
                "solver.starts, outer_iterations and inner_iterations must be at least 1".into(),
            ));
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::InvalidScenario("solver.penalty_growth must exceed 1".into()));
        }
        if !(self.multiplex_penalty >= 0.0) {
            return Err(Error::InvalidScenario("solver.multiplex_penalty must be non-negative".into()));
        }
        if !(self.initial_spread >= 0.0 && self.initial_spread <= 1.0) {
            return Err(Error::InvalidScenario("solver.initial_spread must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn settings(&self, multiplex_penalty: f64) -> AlmSettings {
        AlmSettings {
            outer_iterations: self.outer_iterations,
            inner_iterations: self.inner_iterations,
            inner_tolerance: self.inner_tolerance,
            feasibility_tolerance: self.feasibility_tolerance,
            penalty_initial: self.penalty_initial,
            penalty_growth: self.penalty_growth,
            penalty_max: self.penalty_max,
            multiplex_penalty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    NotConverged,
}

/// Outcome of one random start.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub status: SolveStatus,
    pub objective: f64,
    pub equality_violation: f64,
    pub inequality_violation: f64,
    pub multiplexing_residual: f64,
    pub stationarity: f64,
    pub inner_iterations: usize,
    /// Set when the start aborted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Flat controls of the selected start.
    pub controls: Vec<f64>,
    pub trajectory: JointTrajectory,
    /// Multipliers of the scheduled program, `∇J + Σ λ ∇h + Σ κ ∇g = 0`.
    pub multipliers: Multipliers,
    pub objective: f64,
    pub equality_violation: f64,
    pub inequality_violation: f64,
    /// `max_t ‖z(U_t)‖`.
    pub multiplexing_residual: f64,
    pub stationarity: f64,
    /// Active plant per step, if any control is nonzero.
    pub schedule: Vec<Option<usize>>,
    pub best_seed: u64,
    pub seeds: Vec<SeedReport>,
}

/// One finished start.
#[derive(Debug, Clone)]
struct Candidate {
    u: Vec<f64>,
    multipliers: Multipliers,
    objective: f64,
    equality_violation: f64,
    inequality_violation: f64,
    stationarity: f64,
    inner_iterations: usize,
}

impl Candidate {
    fn from_polish(p: PolishOutcome, inner: usize) -> Self {
        Candidate {
            u: p.u,
            multipliers: p.multipliers,
            objective: p.objective,
            equality_violation: p.equality_violation,
            inequality_violation: p.inequality_violation,
            stationarity: p.stationarity,
            inner_iterations: inner,
        }
    }

    fn feasible(&self, tol: f64) -> bool {
        self.equality_violation <= tol && self.inequality_violation <= tol
    }
}

fn multiplexing_residual(ev: &Evaluation) -> f64 {
    ev.z_steps
        .iter()
        .map(|z| (z[0] * z[0] + z[1] * z[1]).sqrt())
        .fold(0.0, f64::max)
}

/// Dominant plant per step, measured relative to each plant's box.
pub fn extract_schedule(nlp: &TranscribedNlp, u: &[f64]) -> Vec<usize> {
    let layout = nlp.layout();
    let m = nlp.step_dim();
    u.chunks(m)
        .map(|ut| {
            let mut best = (0, f64::NEG_INFINITY);
            for (i, bx) in layout.boxes().iter().enumerate() {
                let norm = ut[layout.range(i)].iter().map(|v| v * v).sum::<f64>().sqrt() / bx.scale().max(f64::MIN_POSITIVE);
                if norm > best.1 {
                    best = (i, norm);
                }
            }
            best.0
        })
        .collect()
}

/// Bounds of the scheduled program: every plant but `schedule[t]` is pinned to zero at step `t`.
pub fn scheduled_bounds(nlp: &TranscribedNlp, schedule: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let layout = nlp.layout();
    let m = nlp.step_dim();
    let mut lower = nlp.lower().to_vec();
    let mut upper = nlp.upper().to_vec();
    for (t, &active) in schedule.iter().enumerate() {
        for i in 0..layout.plant_count() {
            if i != active {
                for k in layout.range(i) {
                    lower[t * m + k] = 0.0;
                    upper[t * m + k] = 0.0;
                }
            }
        }
    }
    (lower, upper)
}

fn without_aux(nlp: &TranscribedNlp) -> Vec<bool> {
    let mut rows = vec![true; nlp.equality_count()];
    if let Some(r) = nlp.aux_row() {
        rows[r] = false;
        rows[r + 1] = false;
    }
    rows
}

fn solve_scheduled(
    nlp: &TranscribedNlp,
    schedule: &[usize],
    u_start: &[f64],
    start: Option<&Multipliers>,
    opts: &SolveOptions,
) -> Result<Candidate> {
    let (lower, upper) = scheduled_bounds(nlp, schedule);
    let mut u0 = u_start.to_vec();
    spg::project(&mut u0, &lower, &upper);
    let problem = AlmProblem::new(nlp, lower, upper, without_aux(nlp), &u0)?;
    let out = problem.solve(&u0, start, &opts.settings(0.0))?;
    let inner = out.inner_iterations;
    let polished = polish::polish(
        &problem,
        &out.u,
        &out.multipliers,
        opts.feasibility_tolerance,
        opts.inner_tolerance,
        opts.polish_iterations,
    )?;
    Ok(Candidate::from_polish(polished, inner))
}

/// Switching-function schedule: at each step the plant whose unconstrained
/// first-order gain `½‖clip(−∂/∂uⁱ (Σ λh + κg))‖²` is largest. Only the
/// `limit` steps with the largest gain surplus over the current plant switch.
fn switching_schedule(nlp: &TranscribedNlp, c: &Candidate, current: &[usize], limit: usize) -> Result<Vec<usize>> {
    let ev = nlp.evaluate(&c.u)?;
    let mut cot = nlp.zero_cotangents();
    nlp.seed_equalities(&c.multipliers.equality, &mut cot);
    cot.z_weight = [0.0, 0.0];
    cot.path.copy_from_slice(&c.multipliers.inequality);
    let d = nlp.pullback(&c.u, &ev.rollout, &cot).grad;
    let layout = nlp.layout();
    let m = nlp.step_dim();
    let (lo, hi) = (nlp.lower(), nlp.upper());
    let gain = |t: usize, i: usize| -> f64 {
        layout
            .range(i)
            .map(|k| {
                let idx = t * m + k;
                let v = (-d[idx]).clamp(lo[idx], hi[idx]);
                0.5 * v * v
            })
            .sum()
    };
    let mut flips: Vec<(f64, usize, usize)> = Vec::new();
    for t in 0..nlp.horizon() {
        let here = gain(t, current[t]);
        let (best, value) = (0..layout.plant_count())
            .map(|i| (i, gain(t, i)))
            .fold((current[t], here), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best != current[t] {
            flips.push((value - here, t, best));
        }
    }
    flips.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out = current.to_vec();
    for &(_, t, i) in flips.iter().take(limit) {
        out[t] = i;
    }
    Ok(out)
}

fn random_start(nlp: &TranscribedNlp, spread: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    nlp.lower()
        .iter()
        .zip(nlp.upper())
        .map(|(lo, hi)| {
            let (a, b) = (spread * lo, spread * hi);
            if a < b {
                rng.random_range(a..b)
            } else {
                0.0
            }
        })
        .collect()
}

fn run_start(nlp: &TranscribedNlp, opts: &SolveOptions, seed: u64) -> Result<Candidate> {
    let u0 = random_start(nlp, opts.initial_spread, seed);
    let all_rows = vec![true; nlp.equality_count()];
    if nlp.ensemble().len() == 1 {
        let problem = AlmProblem::new(nlp, nlp.lower().to_vec(), nlp.upper().to_vec(), all_rows, &u0)?;
        let out = problem.solve(&u0, None, &opts.settings(0.0))?;
        let inner = out.inner_iterations;
        let polished = polish::polish(
            &problem,
            &out.u,
            &out.multipliers,
            opts.feasibility_tolerance,
            opts.inner_tolerance,
            opts.polish_iterations,
        )?;
        return Ok(Candidate::from_polish(polished, inner));
    }

    // Phase one: full program with the multiplexing aid, tightened in stages.
    let problem = AlmProblem::new(nlp, nlp.lower().to_vec(), nlp.upper().to_vec(), all_rows, &u0)?;
    let mut u = u0;
    let mut mult = None;
    let mut inner = 0;
    let mut weight = opts.multiplex_penalty;
    for stage in 0..opts.multiplex_stages.max(1) {
        let mut settings = opts.settings(weight);
        settings.inner_tolerance = opts.inner_tolerance.max(1e-5);
        settings.feasibility_tolerance = opts.feasibility_tolerance.max(1e-6);
        settings.outer_iterations = opts.outer_iterations.min(10);
        settings.inner_iterations = opts.inner_iterations.min(1000);
        settings.penalty_max = opts.penalty_max.min(1e6);
        let out = problem.solve(&u, mult.as_ref(), &settings)?;
        debug!(
            "seed {seed} stage {stage}: J = {:.6e}, eq = {:.2e}, ineq = {:.2e}",
            out.objective, out.equality_violation, out.inequality_violation
        );
        inner += out.inner_iterations;
        u = out.u;
        mult = Some(out.multipliers);
        weight *= 10.0;
    }

    // Phase two: scheduled program.
    let mut schedule = extract_schedule(nlp, &u);
    let mut best = solve_scheduled(nlp, &schedule, &u, None, opts)?;
    inner += best.inner_iterations;
    let tol = opts.feasibility_tolerance;
    for round in 0..opts.schedule_refinements {
        if !best.feasible(tol) {
            break;
        }
        let limit = nlp.horizon().div_ceil(20);
        let proposal = switching_schedule(nlp, &best, &schedule, limit)?;
        let changes = proposal.iter().zip(&schedule).filter(|(a, b)| a != b).count();
        if changes == 0 {
            break;
        }
        let trial = solve_scheduled(nlp, &proposal, &best.u, None, opts)?;
        inner += trial.inner_iterations;
        debug!(
            "seed {seed} refinement {round}: {changes} switches, J {:.8e} -> {:.8e}",
            best.objective, trial.objective
        );
        if trial.feasible(tol) && trial.objective < best.objective {
            best = trial;
            schedule = proposal;
        } else {
            break;
        }
    }
    best.inner_iterations = inner;
    Ok(best)
}

fn report(nlp: &TranscribedNlp, opts: &SolveOptions, seed: u64, c: &Result<Candidate>) -> SeedReport {
    match c {
        Ok(c) => {
            let residual = nlp.evaluate(&c.u).map(|ev| multiplexing_residual(&ev)).unwrap_or(f64::INFINITY);
            let ok = c.feasible(opts.feasibility_tolerance) && c.stationarity <= opts.inner_tolerance;
            SeedReport {
                seed,
                status: if ok { SolveStatus::Converged } else { SolveStatus::NotConverged },
                objective: c.objective,
                equality_violation: c.equality_violation,
                inequality_violation: c.inequality_violation,
                multiplexing_residual: residual,
                stationarity: c.stationarity,
                inner_iterations: c.inner_iterations,
                error: None,
            }
        }
        Err(e) => SeedReport {
            seed,
            status: SolveStatus::NotConverged,
            objective: f64::INFINITY,
            equality_violation: f64::INFINITY,
            inequality_violation: f64::INFINITY,
            multiplexing_residual: f64::INFINITY,
            stationarity: f64::INFINITY,
            inner_iterations: 0,
            error: Some(e.to_string()),
        },
    }
}

/// Multi-start solve. Starts run in parallel; the winner is the first by
/// (feasible, objective, seed), so the result does not depend on thread timing.
pub fn solve(nlp: &TranscribedNlp, opts: &SolveOptions) -> Result<SolveResult> {
    opts.validate()?;
    let seeds: Vec<u64> = (0..opts.starts as u64).map(|k| opts.seed.wrapping_add(k)).collect();
    let outcomes: Vec<Result<Candidate>> = seeds.par_iter().map(|&s| run_start(nlp, opts, s)).collect();
    let reports: Vec<SeedReport> = seeds
        .iter()
        .zip(&outcomes)
        .map(|(&s, c)| report(nlp, opts, s, c))
        .collect();
    for r in &reports {
        info!(
            "seed {}: {:?}, J = {:.8e}, eq = {:.1e}, ineq = {:.1e}, stat = {:.1e}",
            r.seed, r.status, r.objective, r.equality_violation, r.inequality_violation, r.stationarity
        );
    }
    let tol = opts.feasibility_tolerance;
    let best = outcomes
        .iter()
        .zip(&seeds)
        .filter_map(|(c, s)| c.as_ref().ok().map(|c| (c, *s)))
        .min_by(|(a, sa), (b, sb)| {
            let ka = (!a.feasible(tol), a.objective, *sa);
            let kb = (!b.feasible(tol), b.objective, *sb);
            ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
        });
    let Some((best, best_seed)) = best else {
        let first = outcomes.into_iter().find_map(|c| c.err());
        return Err(first.unwrap_or_else(|| Error::NumericalBreakdown("no start finished".into())));
    };
    let ev = nlp.evaluate(&best.u)?;
    let trajectory = nlp.trajectory(&best.u)?;
    let schedule = trajectory
        .controls
        .iter()
        .map(|c| star_membership(nlp.layout(), c, MEMBERSHIP_TOL).branch)
        .collect();
    let status = reports.iter().find(|r| r.seed == best_seed).map(|r| r.status).unwrap_or(SolveStatus::NotConverged);
    Ok(SolveResult {
        status,
        controls: best.u.clone(),
        trajectory,
        multipliers: best.multipliers.clone(),
        objective: best.objective,
        equality_violation: best.equality_violation,
        inequality_violation: best.inequality_violation,
        multiplexing_residual: multiplexing_residual(&ev),
        stationarity: best.stationarity,
        schedule,
        best_seed,
        seeds: reports,
    })
}
