//! Least-squares recovery of the multipliers along a given trajectory.
//!
//! For a fixed `ν` and fixed active sets every condition is linear in the
//! unknowns: `χ`, the terminal seeds of fixed-endpoint plants and the
//! covectors of active state constraints. Each unknown contributes one column,
//! obtained by pulling a unit cotangent back through the rollout. The rows are
//! the Hamiltonian gradient coordinates that lie strictly inside their box.

use nalgebra::{DMatrix, DVector};

use super::{AdjointCertificate, VerifierTolerances};
use crate::error::{Error, Result};
use crate::multiplex::{support_cone_halfspace, ConeDirection, ControlLayout, JointControl};
use crate::optimizer::{Cotangents, Rollout, TranscribedNlp};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unknown {
    /// Multiplier along `(1, 1)`.
    ChiSum,
    /// Multiplier along `(1, −1)`.
    ChiDiff,
    Rotation(usize),
    State(usize),
    /// Stacked inequality index `(t − 1) · L + k`.
    Constraint(usize),
}

/// Support cone directions of `u`, classifying points outside the box by
/// their nearest face.
pub(crate) fn cone_directions(layout: &ControlLayout, u: &JointControl) -> Vec<ConeDirection> {
    let mut clamped = u.clone();
    for (block, bx) in clamped.blocks.iter_mut().zip(layout.boxes()) {
        bx.project(block);
    }
    support_cone_halfspace(layout, &clamped).expect("projected apex lies in the box")
}

struct Fit<'a> {
    nlp: &'a TranscribedNlp,
    u: &'a [f64],
    rollout: &'a Rollout,
    /// `(t, coordinate)` pairs whose Hamiltonian gradient must vanish.
    rows: Vec<(usize, usize)>,
}

impl Fit<'_> {
    fn cotangents(&self, unknowns: &[Unknown], values: &[f64], nu: f64) -> Cotangents {
        let mut cot = self.nlp.zero_cotangents();
        cot.objective = nu;
        for (unknown, v) in unknowns.iter().zip(values) {
            match *unknown {
                Unknown::ChiSum => {
                    cot.z_weight[0] += v;
                    cot.z_weight[1] += v;
                }
                Unknown::ChiDiff => {
                    cot.z_weight[0] += v;
                    cot.z_weight[1] -= v;
                }
                Unknown::Rotation(i) => cot.rotation[i] += v,
                Unknown::State(k) => cot.state[k] += v,
                Unknown::Constraint(k) => cot.path[k] += v,
            }
        }
        cot
    }

    fn restricted(&self, cot: &Cotangents) -> Vec<f64> {
        let m = self.nlp.step_dim();
        let grad = self.nlp.pullback(self.u, self.rollout, cot).grad;
        self.rows.iter().map(|(t, k)| grad[t * m + k]).collect()
    }

    /// Column matrix of the unknowns and the constant part for `ν`.
    fn system(&self, unknowns: &[Unknown], nu: f64) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(self.rows.len(), unknowns.len());
        for j in 0..unknowns.len() {
            let mut unit = vec![0.0; unknowns.len()];
            unit[j] = 1.0;
            let col = self.restricted(&self.cotangents(unknowns, &unit, 0.0));
            a.set_column(j, &DVector::from_vec(col));
        }
        let b = DVector::from_vec(self.restricted(&self.cotangents(&[], &[], nu)));
        (a, b)
    }
}

/// Column norms, with zero marking columns that carry no information.
fn column_scales(a: &DMatrix<f64>) -> Vec<f64> {
    a.column_iter().map(|c| c.norm()).collect()
}

/// Minimum-norm least-squares solution of `A v = −b` on scaled columns.
/// Returns the solution and whether the informative columns are rank deficient.
fn solve_normal(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(Vec<f64>, bool)> {
    let scales = column_scales(a);
    let keep: Vec<usize> = (0..scales.len()).filter(|j| scales[*j] > 0.0).collect();
    let mut v = vec![0.0; scales.len()];
    if keep.is_empty() || a.nrows() == 0 {
        return Ok((v, false));
    }
    let scaled = DMatrix::from_fn(a.nrows(), keep.len(), |r, c| a[(r, keep[c])] / scales[keep[c]]);
    let svd = scaled.svd(true, true);
    let eps = svd.singular_values.max() * 1e-12;
    let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
    let y = svd.solve(&(-b), eps).map_err(|e| Error::NumericalBreakdown(e.to_string()))?;
    for (c, j) in keep.iter().enumerate() {
        v[*j] = y[c] / scales[*j];
    }
    Ok((v, rank < keep.len()))
}

/// Unit vector minimising `‖A v‖` on scaled columns.
fn solve_abnormal(a: &DMatrix<f64>) -> (Vec<f64>, bool) {
    let scales = column_scales(a);
    let keep: Vec<usize> = (0..scales.len()).filter(|j| scales[*j] > 0.0).collect();
    let mut v = vec![0.0; scales.len()];
    if keep.is_empty() {
        return (v, false);
    }
    let scaled = DMatrix::from_fn(a.nrows(), keep.len(), |r, c| a[(r, keep[c])] / scales[keep[c]]);
    let gram = scaled.transpose() * &scaled;
    let eig = gram.symmetric_eigen();
    let (best, smallest) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (j, l)| if *l < acc.1 { (j, *l) } else { acc });
    let largest = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let near_null = eig.eigenvalues.iter().filter(|l| **l <= smallest + largest * 1e-12).count();
    for (c, j) in keep.iter().enumerate() {
        v[*j] = eig.eigenvectors[(c, best)] / scales[*j];
    }
    (v, near_null > 1)
}

/// Fits a certificate with the given `ν ∈ {−1, 0}` along the rollout of `u`.
pub(crate) fn fit_certificate(
    nlp: &TranscribedNlp,
    u: &[f64],
    nu: f64,
    tols: &VerifierTolerances,
) -> Result<AdjointCertificate> {
    let ensemble = nlp.ensemble();
    let layout = nlp.layout();
    let horizon = nlp.horizon();
    let l = ensemble.constraint_dim();
    let ev = nlp.evaluate(u)?;

    let mut rows = Vec::new();
    for (t, ut) in nlp.to_controls(u).iter().enumerate() {
        for (k, d) in cone_directions(layout, ut).iter().enumerate() {
            if *d == ConeDirection::Free {
                rows.push((t, k));
            }
        }
    }
    let fit = Fit {
        nlp,
        u,
        rollout: &ev.rollout,
        rows,
    };

    let mut unknowns = Vec::new();
    if ensemble.len() >= 2 {
        if nu != 0.0 {
            unknowns.push(Unknown::ChiSum);
        }
        unknowns.push(Unknown::ChiDiff);
    }
    for i in 0..ensemble.len() {
        if nlp.terminal_row(i).is_some() {
            unknowns.push(Unknown::Rotation(i));
            unknowns.extend(ensemble.state_range(i).map(Unknown::State));
        }
    }
    unknowns.extend(
        (0..horizon * l)
            .filter(|k| ev.inequalities[*k] >= -tols.activation)
            .map(Unknown::Constraint),
    );

    let mut values;
    let mut degenerate;
    loop {
        let (a, b) = fit.system(&unknowns, nu);
        if nu != 0.0 {
            (values, degenerate) = solve_normal(&a, &b)?;
        } else {
            (values, degenerate) = solve_abnormal(&a);
            let orient: f64 = unknowns
                .iter()
                .zip(&values)
                .filter(|(u, _)| matches!(u, Unknown::Constraint(_)))
                .map(|(_, v)| *v)
                .sum();
            if orient > 0.0 {
                values.iter_mut().for_each(|v| *v = -*v);
            }
        }
        let wrong_sign: Vec<usize> = (0..unknowns.len())
            .filter(|j| matches!(unknowns[*j], Unknown::Constraint(_)) && values[*j] > 0.0)
            .collect();
        if wrong_sign.is_empty() {
            break;
        }
        let mut j = 0;
        unknowns.retain(|_| {
            j += 1;
            !wrong_sign.contains(&(j - 1))
        });
    }

    let cot = fit.cotangents(&unknowns, &values, nu);
    let pb = nlp.pullback(u, &ev.rollout, &cot);
    let p = ensemble.len();
    let n = ensemble.state_dim();
    let mut cert = AdjointCertificate {
        nu,
        chi: cot.z_weight,
        rho: pb.rho.chunks(p).map(|c| c.to_vec()).collect(),
        xi: pb.xi.chunks(n.max(1)).take(horizon).map(|c| c.to_vec()).collect(),
        mu: cot.path.chunks(l.max(1)).take(horizon).map(|c| c.to_vec()).collect(),
        degenerate,
    };
    if n == 0 {
        cert.xi = vec![Vec::new(); horizon];
    }
    if l == 0 {
        cert.mu = vec![Vec::new(); horizon];
    }
    if nu == 0.0 {
        let norm = cert.magnitude();
        if norm > 0.0 {
            cert.scale(1.0 / norm);
        }
    }
    Ok(cert)
}
