//! Active-set refinement of an augmented Lagrangian solution.
//!
//! The running cost has identity Hessian, so a unit step along the negative
//! reduced Lagrangian gradient followed by a Gauss–Newton return to the
//! constraint manifold converges quickly once the active set is right.

use log::debug;
use nalgebra::{DMatrix, DVector};

use super::alm::{AlmProblem, Multipliers};
use super::nlp::Evaluation;
use super::spg;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PolishOutcome {
    pub u: Vec<f64>,
    pub multipliers: Multipliers,
    pub objective: f64,
    pub equality_violation: f64,
    pub inequality_violation: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Row {
    Equality(usize),
    Inequality(usize),
}

struct Linearisation {
    rows: Vec<Row>,
    values: Vec<f64>,
    gradients: Vec<Vec<f64>>,
}

fn linearise(problem: &AlmProblem, u: &[f64], ev: &Evaluation, rows: Vec<Row>) -> Linearisation {
    let nlp = problem.nlp;
    let mut values = Vec::with_capacity(rows.len());
    let mut gradients = Vec::with_capacity(rows.len());
    for row in &rows {
        match *row {
            Row::Equality(r) => {
                values.push(ev.equalities[r]);
                gradients.push(nlp.equality_gradient(u, &ev.rollout, r));
            }
            Row::Inequality(k) => {
                values.push(ev.inequalities[k]);
                gradients.push(nlp.inequality_gradient(u, &ev.rollout, k));
            }
        }
    }
    Linearisation {
        rows,
        values,
        gradients,
    }
}

/// Minimum-norm `y` with `(J_F J_Fᵀ) y = rhs`.
fn gram_solve(lin: &Linearisation, free: &[bool], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = lin.rows.len();
    if m == 0 {
        return Ok(vec![]);
    }
    let mut gram = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let v: f64 = lin.gradients[a]
                .iter()
                .zip(&lin.gradients[b])
                .zip(free)
                .filter(|(_, f)| **f)
                .map(|((x, y), _)| x * y)
                .sum();
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    let svd = gram.svd(true, true);
    let eps = svd.singular_values.max() * 1e-13;
    let y = svd
        .solve(&DVector::from_column_slice(rhs), eps)
        .map_err(|e| Error::NumericalBreakdown(e.to_string()))?;
    Ok(y.iter().copied().collect())
}

fn active_rows(problem: &AlmProblem, ev: &Evaluation, mult: &Multipliers) -> Vec<Row> {
    let mut rows: Vec<Row> = (0..ev.equalities.len())
        .filter(|r| problem.active_rows[*r])
        .map(Row::Equality)
        .collect();
    rows.extend(
        (0..ev.inequalities.len())
            .filter(|k| mult.inequality[*k] > 0.0 || ev.inequalities[*k] > 0.0)
            .map(Row::Inequality),
    );
    rows
}

fn interior(problem: &AlmProblem, u: &[f64]) -> Vec<bool> {
    u.iter()
        .zip(problem.lower.iter().zip(&problem.upper))
        .map(|(v, (lo, hi))| lo < hi && v > lo && v < hi)
        .collect()
}

/// Gauss–Newton steps onto `{rows = 0}` moving interior coordinates only.
fn restore(problem: &AlmProblem, mut u: Vec<f64>, mult: &Multipliers, tol: f64) -> Result<Vec<f64>> {
    for _ in 0..20 {
        let ev = problem.nlp.evaluate(&u)?;
        let rows = active_rows(problem, &ev, mult);
        let lin = linearise(problem, &u, &ev, rows);
        let worst = lin.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if worst <= tol {
            break;
        }
        let free = interior(problem, &u);
        let y = gram_solve(&lin, &free, &lin.values)?;
        for (a, grad) in lin.gradients.iter().enumerate() {
            for k in 0..u.len() {
                if free[k] {
                    u[k] -= grad[k] * y[a];
                }
            }
        }
        spg::project(&mut u, &problem.lower, &problem.upper);
    }
    Ok(u)
}

/// Least-squares multipliers on the free coordinates and the resulting
/// Lagrangian gradient.
fn estimate(
    problem: &AlmProblem,
    u: &[f64],
    ev: &Evaluation,
    mult: &Multipliers,
) -> Result<(Multipliers, Vec<f64>)> {
    let nlp = problem.nlp;
    let grad_j = nlp.objective_gradient(u, &ev.rollout);
    let mut rows = active_rows(problem, ev, mult);
    let pinned: Vec<bool> = problem.lower.iter().zip(&problem.upper).map(|(lo, hi)| lo >= hi).collect();
    let mut free: Vec<bool> = pinned.iter().map(|p| !p).collect();
    let mut result = None;
    for _ in 0..6 {
        let lin = linearise(problem, u, ev, rows.clone());
        let rhs: Vec<f64> = lin
            .gradients
            .iter()
            .map(|g| -g.iter().zip(&grad_j).zip(&free).filter(|(_, f)| **f).map(|((a, b), _)| a * b).sum::<f64>())
            .collect();
        let y = gram_solve(&lin, &free, &rhs)?;
        let mut r = grad_j.clone();
        for (a, g) in lin.gradients.iter().enumerate() {
            for k in 0..r.len() {
                r[k] += y[a] * g[k];
            }
        }
        let negative: Vec<usize> = lin
            .rows
            .iter()
            .zip(&y)
            .filter(|(row, v)| matches!(row, Row::Inequality(_)) && **v < 0.0)
            .map(|(row, _)| match row {
                Row::Inequality(k) => *k,
                Row::Equality(_) => unreachable!(),
            })
            .collect();
        let mut changed = false;
        for k in 0..u.len() {
            if pinned[k] {
                continue;
            }
            let at_upper = u[k] >= problem.upper[k];
            let at_lower = u[k] <= problem.lower[k];
            let hold = (at_upper && r[k] < 0.0) || (at_lower && r[k] > 0.0);
            if free[k] == hold {
                free[k] = !hold;
                changed = true;
            }
        }
        let mut m = Multipliers {
            equality: vec![0.0; ev.equalities.len()],
            inequality: vec![0.0; ev.inequalities.len()],
        };
        for (row, v) in lin.rows.iter().zip(&y) {
            match *row {
                Row::Equality(i) => m.equality[i] = *v,
                Row::Inequality(k) => m.inequality[k] = v.max(0.0),
            }
        }
        result = Some((m, r));
        if !negative.is_empty() {
            rows.retain(|row| !matches!(row, Row::Inequality(k) if negative.contains(k)));
        } else if !changed {
            break;
        }
    }
    Ok(result.expect("at least one pass"))
}

/// Alternates multiplier estimation, a reduced-gradient step and restoration.
pub fn polish(
    problem: &AlmProblem,
    u0: &[f64],
    start: &Multipliers,
    feasibility_tolerance: f64,
    stationarity_tolerance: f64,
    max_iterations: usize,
) -> Result<PolishOutcome> {
    let mut mult = start.clone();
    let mut u = restore(problem, u0.to_vec(), &mult, 0.1 * feasibility_tolerance)?;
    let mut alpha = 1.0;
    let mut best: Option<PolishOutcome> = None;
    let mut previous = f64::INFINITY;
    let aim = stationarity_tolerance * 1e-3;
    let mut stalled = 0;
    for iteration in 0..=max_iterations {
        let ev = problem.nlp.evaluate(&u)?;
        let (m, r) = estimate(problem, &u, &ev, &mult)?;
        mult = m;
        let stat = problem.stationarity(&u, &ev, &mult);
        let eq_v = problem.equality_violation(&ev);
        let in_v = AlmProblem::inequality_violation(&ev);
        let converged = eq_v <= feasibility_tolerance && in_v <= feasibility_tolerance && stat <= stationarity_tolerance;
        debug!("polish {iteration}: J = {:.8e}, eq = {eq_v:.2e}, ineq = {in_v:.2e}, stat = {stat:.2e}, step = {alpha}", ev.objective);
        let outcome = PolishOutcome {
            u: u.clone(),
            multipliers: mult.clone(),
            objective: ev.objective,
            equality_violation: eq_v,
            inequality_violation: in_v,
            stationarity: stat,
            iterations: iteration,
            converged,
        };
        let better = match &best {
            None => true,
            Some(b) => rank(&outcome, feasibility_tolerance) < rank(b, feasibility_tolerance),
        };
        if better {
            best = Some(outcome);
            stalled = 0;
        } else {
            stalled += 1;
        }
        let done = eq_v <= feasibility_tolerance && in_v <= feasibility_tolerance && stat <= aim;
        if done || stalled >= 8 || iteration == max_iterations {
            break;
        }
        alpha = if stat < previous { (alpha * 2.0f64).min(1.0) } else { (alpha * 0.5f64).max(1.0 / 64.0) };
        previous = stat;
        for k in 0..u.len() {
            if problem.lower[k] >= problem.upper[k] {
                continue;
            }
            let held = (u[k] >= problem.upper[k] && r[k] < 0.0) || (u[k] <= problem.lower[k] && r[k] > 0.0);
            if !held {
                u[k] -= alpha * r[k];
            }
        }
        spg::project(&mut u, &problem.lower, &problem.upper);
        u = restore(problem, u, &mult, 0.1 * feasibility_tolerance)?;
    }
    Ok(best.expect("at least one iteration"))
}

/// Ordering key: feasible first, then smaller stationarity.
fn rank(o: &PolishOutcome, tol: f64) -> (bool, f64) {
    let infeasible = o.equality_violation > tol || o.inequality_violation > tol;
    (infeasible, if infeasible { o.equality_violation.max(o.inequality_violation) } else { o.stationarity })
}
