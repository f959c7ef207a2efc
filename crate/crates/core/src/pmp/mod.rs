//! Discrete-time maximum principle: Hamiltonian, adjoint sweep, multiplier
//! estimation and the condition checker.
//!
//! Signs follow the maximum principle. The Hamiltonian carries the running
//! cost with weight `ν ∈ {−1, 0}`, the optimal control maximises it over the
//! admissible cone, and state-constraint covectors are non-positive.
//!
//! ```text
//! (i)   the certificate does not vanish
//! (ii)  adjoint recursion
//! (iii) transversality at goal and free endpoints
//! (iv)  ⟨D_U H_t, d⟩ ≤ 0 for every admissible coordinate direction d
//! (v)   μ ∘ g = 0
//! (vi)  μ ≤ 0
//! (vii) Σ_t z(U_t) = 0
//! ```

mod check;
mod estimate;
mod hamiltonian;

use serde::{Deserialize, Serialize};

pub use check::{check_conditions, satellite_identities, Condition, PmpReport, SatelliteIdentities};
pub use hamiltonian::{adjoint_backward, grad_h_control, hamiltonian, Adjoints, Covectors, TerminalSeeds};

use crate::error::{Error, Result};
use crate::optimizer::TranscribedNlp;
use crate::plants::JointTrajectory;
use crate::scenario::Scenario;

/// Tolerances of the verifier. `scaled` multiplies all of them at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifierTolerances {
    pub stationarity: f64,
    pub slackness: f64,
    pub multiplexing: f64,
    pub sign: f64,
    pub activation: f64,
    pub nontriviality: f64,
    pub adjoint: f64,
    pub transversality: f64,
    pub feasibility: f64,
}

impl Default for VerifierTolerances {
    fn default() -> Self {
        VerifierTolerances {
            stationarity: 1e-6,
            slackness: 1e-8,
            multiplexing: 1e-8,
            sign: 1e-12,
            activation: 1e-7,
            nontriviality: 1e-9,
            adjoint: 1e-9,
            transversality: 1e-6,
            feasibility: 1e-6,
        }
    }
}

impl VerifierTolerances {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.stationarity,
            self.slackness,
            self.multiplexing,
            self.sign,
            self.activation,
            self.nontriviality,
            self.adjoint,
            self.transversality,
            self.feasibility,
        ];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidScenario("verifier tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        VerifierTolerances {
            stationarity: self.stationarity * factor,
            slackness: self.slackness * factor,
            multiplexing: self.multiplexing * factor,
            sign: self.sign * factor,
            activation: self.activation * factor,
            nontriviality: self.nontriviality * factor,
            adjoint: self.adjoint * factor,
            transversality: self.transversality * factor,
            feasibility: self.feasibility * factor,
        }
    }
}

/// Adjoints and multipliers along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointCertificate {
    /// Weight of the running cost, `−1` (normal) or `0` (abnormal).
    pub nu: f64,
    /// Multiplier of the auxiliary accumulator; constant in time.
    pub chi: [f64; 2],
    /// `rho[t][i]` for `t = 0..N−1`.
    pub rho: Vec<Vec<f64>>,
    /// `xi[t]`, stacked over plants, for `t = 0..N−1`.
    pub xi: Vec<Vec<f64>>,
    /// `mu[t − 1]`, stacked over plants, for `t = 1..N`.
    pub mu: Vec<Vec<f64>>,
    /// The least-squares system was rank deficient; the minimum-norm fit was used.
    pub degenerate: bool,
}

impl AdjointCertificate {
    /// Euclidean norm of everything except the `(1, 1)` component of `χ`,
    /// which annihilates `z` to first order on the whole admissible set and
    /// so certifies nothing.
    pub fn magnitude(&self) -> f64 {
        let chi_diff = (self.chi[0] - self.chi[1]) / std::f64::consts::SQRT_2;
        let mut sum = self.nu * self.nu + chi_diff * chi_diff;
        for seq in [&self.rho, &self.xi, &self.mu] {
            sum += seq.iter().flatten().map(|v| v * v).sum::<f64>();
        }
        sum.sqrt()
    }

    fn scale(&mut self, factor: f64) {
        self.nu *= factor;
        self.chi[0] *= factor;
        self.chi[1] *= factor;
        for seq in [&mut self.rho, &mut self.xi, &mut self.mu] {
            seq.iter_mut().flatten().for_each(|v| *v *= factor);
        }
    }
}

fn flat_controls(nlp: &TranscribedNlp, traj: &JointTrajectory) -> Result<Vec<f64>> {
    nlp.from_controls(&traj.controls)
}

/// Fits certificates with `ν = −1` and, if that one fails, with `ν = 0`,
/// and returns the first that passes. When neither passes, the normal one is
/// returned with its report.
pub fn certify(
    scenario: &Scenario,
    traj: &JointTrajectory,
    tols: &VerifierTolerances,
) -> Result<(AdjointCertificate, PmpReport)> {
    tols.validate()?;
    let nlp = TranscribedNlp::new(scenario)?;
    let u = flat_controls(&nlp, traj)?;
    let normal = estimate::fit_certificate(&nlp, &u, -1.0, tols)?;
    let normal_report = check::check_with(&nlp, traj, &normal, tols)?;
    if normal_report.verdict {
        return Ok((normal, normal_report));
    }
    let abnormal = estimate::fit_certificate(&nlp, &u, 0.0, tols)?;
    let abnormal_report = check::check_with(&nlp, traj, &abnormal, tols)?;
    if abnormal_report.verdict {
        Ok((abnormal, abnormal_report))
    } else {
        Ok((normal, normal_report))
    }
}

/// The certificate chosen by [`certify`].
pub fn estimate_multipliers(
    scenario: &Scenario,
    traj: &JointTrajectory,
    tols: &VerifierTolerances,
) -> Result<AdjointCertificate> {
    certify(scenario, traj, tols).map(|(cert, _)| cert)
}

#[cfg(test)]
mod tests;
