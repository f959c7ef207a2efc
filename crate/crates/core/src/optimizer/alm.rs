//! Augmented Lagrangian outer loop around [`spg`](super::spg).

use log::debug;

use super::nlp::{Evaluation, TranscribedNlp};
use super::spg::{self, SpgOptions};
use crate::error::Result;

/// Smallest row scale; keeps rows with vanishing gradients from blowing up.
const SCALE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AlmSettings {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub inner_tolerance: f64,
    pub feasibility_tolerance: f64,
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    /// Weight of the per-step `‖z(U_t)‖²` aid; zero switches it off.
    pub multiplex_penalty: f64,
}

/// The program seen by the outer loop: a subset of equality rows, possibly
/// tightened bounds, and the scaling of every row.
#[derive(Debug, Clone)]
pub struct AlmProblem<'a> {
    pub nlp: &'a TranscribedNlp,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Which equality rows of the program are enforced.
    pub active_rows: Vec<bool>,
    pub eq_scale: Vec<f64>,
    pub ineq_scale: Vec<f64>,
    z_scale: f64,
    control_scale: f64,
}

/// Multipliers in the unscaled convention `∇J + Σ λ ∇h + Σ κ ∇g = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub equality: Vec<f64>,
    pub inequality: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlmOutcome {
    pub u: Vec<f64>,
    pub multipliers: Multipliers,
    pub objective: f64,
    pub equality_violation: f64,
    pub inequality_violation: f64,
    pub stationarity: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
}

impl<'a> AlmProblem<'a> {
    /// Scales every row by its gradient magnitude at `u0`.
    pub fn new(
        nlp: &'a TranscribedNlp,
        lower: Vec<f64>,
        upper: Vec<f64>,
        active_rows: Vec<bool>,
        u0: &[f64],
    ) -> Result<Self> {
        let rollout = nlp.rollout(u0)?;
        let eq_scale = (0..nlp.equality_count())
            .map(|r| {
                let g = nlp.equality_gradient(u0, &rollout, r);
                g.iter().map(|v| v * v).sum::<f64>().sqrt().max(SCALE_FLOOR)
            })
            .collect();
        let per_step = nlp.inequality_scales(u0, &rollout);
        let ineq_scale = (0..nlp.horizon()).flat_map(|_| per_step.iter().copied()).collect();
        let scales: Vec<f64> = nlp.layout().boxes().iter().map(|b| b.scale()).collect();
        let mut z_scale: f64 = 0.0;
        for i in 0..scales.len() {
            for j in i + 1..scales.len() {
                z_scale = z_scale.max(scales[i] * scales[j]);
            }
        }
        let control_scale = scales.iter().map(|s| s * s).sum::<f64>() / scales.len() as f64;
        Ok(AlmProblem {
            nlp,
            lower,
            upper,
            active_rows,
            eq_scale,
            ineq_scale,
            z_scale: z_scale.max(SCALE_FLOOR),
            control_scale,
        })
    }

    /// Largest absolute residual over enforced equality rows.
    pub fn equality_violation(&self, ev: &Evaluation) -> f64 {
        ev.equalities
            .iter()
            .zip(&self.active_rows)
            .filter(|(_, a)| **a)
            .map(|(h, _)| h.abs())
            .fold(0.0, f64::max)
    }

    pub fn inequality_violation(ev: &Evaluation) -> f64 {
        ev.inequalities.iter().fold(0.0, |m, g| m.max(*g))
    }

    /// Augmented Lagrangian value and gradient for scaled multipliers.
    fn value_and_gradient(
        &self,
        u: &[f64],
        lambda: &[f64],
        kappa: &[f64],
        penalty: f64,
        z_weight: f64,
    ) -> Option<(f64, Vec<f64>)> {
        let ev = self.nlp.evaluate(u).ok()?;
        let mut value = ev.objective;
        let mut eq_w = vec![0.0; ev.equalities.len()];
        for r in 0..ev.equalities.len() {
            if !self.active_rows[r] {
                continue;
            }
            let h = ev.equalities[r] / self.eq_scale[r];
            value += lambda[r] * h + 0.5 * penalty * h * h;
            eq_w[r] = (lambda[r] + penalty * h) / self.eq_scale[r];
        }
        let mut cot = self.nlp.zero_cotangents();
        cot.objective = 1.0;
        self.nlp.seed_equalities(&eq_w, &mut cot);
        for k in 0..ev.inequalities.len() {
            let g = ev.inequalities[k] / self.ineq_scale[k];
            let shifted = (kappa[k] + penalty * g).max(0.0);
            value += (shifted * shifted - kappa[k] * kappa[k]) / (2.0 * penalty);
            cot.path[k] = shifted / self.ineq_scale[k];
        }
        if z_weight > 0.0 {
            let c = z_weight * self.control_scale / (self.z_scale * self.z_scale);
            value += c * ev.z_steps.iter().map(|z| z[0] * z[0] + z[1] * z[1]).sum::<f64>();
            cot.z_steps = Some(ev.z_steps.iter().map(|z| [2.0 * c * z[0], 2.0 * c * z[1]]).collect());
        }
        let pb = self.nlp.pullback(u, &ev.rollout, &cot);
        value.is_finite().then_some((value, pb.grad))
    }

    /// Projected gradient of the ordinary Lagrangian with unscaled multipliers.
    pub fn stationarity(&self, u: &[f64], ev: &Evaluation, mult: &Multipliers) -> f64 {
        let mut cot = self.nlp.zero_cotangents();
        cot.objective = 1.0;
        let eq: Vec<f64> = mult
            .equality
            .iter()
            .zip(&self.active_rows)
            .map(|(l, a)| if *a { *l } else { 0.0 })
            .collect();
        self.nlp.seed_equalities(&eq, &mut cot);
        cot.path.copy_from_slice(&mult.inequality);
        let g = self.nlp.pullback(u, &ev.rollout, &cot).grad;
        spg::projected_gradient_norm(u, &g, &self.lower, &self.upper)
    }

    /// Runs the outer loop from `u0` with the given starting multipliers.
    pub fn solve(&self, u0: &[f64], start: Option<&Multipliers>, settings: &AlmSettings) -> Result<AlmOutcome> {
        let ne = self.nlp.equality_count();
        let ni = self.nlp.inequality_count();
        let mut lambda = vec![0.0; ne];
        let mut kappa = vec![0.0; ni];
        if let Some(m) = start {
            for r in 0..ne {
                lambda[r] = m.equality[r] * self.eq_scale[r];
            }
            for k in 0..ni {
                kappa[k] = m.inequality[k] * self.ineq_scale[k];
            }
        }
        let mut penalty = settings.penalty_initial;
        let mut u = u0.to_vec();
        spg::project(&mut u, &self.lower, &self.upper);
        let mut inner_tol = (settings.inner_tolerance * 1e2).max(1e-4).max(settings.inner_tolerance);
        let mut previous = f64::INFINITY;
        let mut best_scaled = f64::INFINITY;
        let mut stagnant = 0;
        let mut inner_total = 0;
        let mut outer = 0;
        let mut last;
        loop {
            outer += 1;
            let opts = SpgOptions {
                max_iterations: settings.inner_iterations,
                tolerance: inner_tol,
                ..Default::default()
            };
            let out = spg::minimize(
                |x| self.value_and_gradient(x, &lambda, &kappa, penalty, settings.multiplex_penalty),
                &u,
                &self.lower,
                &self.upper,
                &opts,
            );
            inner_total += out.iterations;
            u = out.x;
            let ev = self.nlp.evaluate(&u)?;
            let mut scaled: f64 = 0.0;
            for r in 0..ne {
                if self.active_rows[r] {
                    let h = ev.equalities[r] / self.eq_scale[r];
                    scaled = scaled.max(h.abs());
                    lambda[r] += penalty * h;
                }
            }
            for k in 0..ni {
                let g = ev.inequalities[k] / self.ineq_scale[k];
                scaled = scaled.max(g.max(-kappa[k] / penalty));
                kappa[k] = (kappa[k] + penalty * g).max(0.0);
            }
            let mult = self.unscale(&lambda, &kappa);
            let eq_v = self.equality_violation(&ev);
            let in_v = Self::inequality_violation(&ev);
            let stat = self.stationarity(&u, &ev, &mult);
            debug!(
                "outer {outer}: J = {:.6e}, eq = {eq_v:.2e}, ineq = {in_v:.2e}, stat = {stat:.2e}, rho = {penalty:.1e}, inner = {}",
                ev.objective, out.iterations
            );
            let converged = eq_v <= settings.feasibility_tolerance
                && in_v <= settings.feasibility_tolerance
                && stat <= settings.inner_tolerance;
            last = AlmOutcome {
                objective: ev.objective,
                u: u.clone(),
                multipliers: mult,
                equality_violation: eq_v,
                inequality_violation: in_v,
                stationarity: stat,
                outer_iterations: outer,
                inner_iterations: inner_total,
                converged,
            };
            if scaled < 0.9 * best_scaled {
                best_scaled = scaled;
                stagnant = 0;
            } else if penalty >= settings.penalty_max {
                stagnant += 1;
            }
            if converged || outer >= settings.outer_iterations || stagnant >= 3 {
                break;
            }
            if scaled > 0.25 * previous {
                penalty = (penalty * settings.penalty_growth).min(settings.penalty_max);
            }
            previous = scaled;
            inner_tol = (inner_tol * 0.1).max(settings.inner_tolerance);
        }
        Ok(last)
    }

    fn unscale(&self, lambda: &[f64], kappa: &[f64]) -> Multipliers {
        Multipliers {
            equality: lambda
                .iter()
                .zip(&self.eq_scale)
                .zip(&self.active_rows)
                .map(|((l, s), a)| if *a { l / s } else { 0.0 })
                .collect(),
            inequality: kappa.iter().zip(&self.ineq_scale).map(|(k, s)| k / s).collect(),
        }
    }
}
