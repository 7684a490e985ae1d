//! Moment estimation of node parameters from (noisy) bi-degrees.
//!
//! The estimator solves the `2n - 1` moment equations
//!
//! ```text
//! z_i^+ = sum_{k != i} mu(alpha_i + beta_k),   i = 1..n
//! z_j^- = sum_{k != j} mu(alpha_k + beta_j),   j = 1..n-1
//! ```
//!
//! with `beta_n = 0` pinned, by full Newton steps on an exact dense solve.
//! The Jacobian `V = -F'(theta)` has a fixed block structure (diagonal
//! blocks plus a hollow cross block) that the [`jacobian`] module exposes
//! together with its closed-form approximate inverse.

pub mod inference;
pub mod jacobian;
pub mod newton;
pub mod residual;
pub mod variance;

pub use inference::{
    confidence_interval, contrast_interval, standardized_stats, standardized_stats_with, ConfidenceInterval, StatKind,
    VarianceMode,
};
pub use jacobian::{build_s_approx, jacobian, s_approx_error, JacobianMatrix, SApprox};
pub use newton::{
    convergence_diagnostics, fit, newton_solve, ConvergenceDiagnostics, FitResult, SolveOptions,
};
pub use residual::moment_residual;
pub use variance::{variance_estimates, VarianceEstimate, VarianceInputs};

use crate::error::{contract, Result};
use crate::graph::BiDegree;
use crate::privacy::NoisyBiDegree;

/// Right-hand sides of the moment equations: observed (possibly noisy,
/// possibly fractional) out- and in-degrees of all `n` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTargets {
    out: Vec<f64>,
    inn: Vec<f64>,
}

impl MomentTargets {
    pub fn new(out: Vec<f64>, inn: Vec<f64>) -> Result<Self> {
        if out.len() != inn.len() {
            return Err(contract(format!(
                "out/in degree vectors differ in length ({} vs {})",
                out.len(),
                inn.len()
            )));
        }
        if out.len() < 2 {
            return Err(contract(format!("need at least 2 nodes, got {}", out.len())));
        }
        if out.iter().chain(&inn).any(|v| !v.is_finite()) {
            return Err(contract("degree targets must be finite"));
        }
        Ok(Self { out, inn })
    }

    pub fn n(&self) -> usize {
        self.out.len()
    }

    pub fn out_deg(&self) -> &[f64] {
        &self.out
    }

    pub fn in_deg(&self) -> &[f64] {
        &self.inn
    }

    /// Every target lies in the open interval `(0, n - 1)`, the attainable
    /// range of an expected degree, and so does the in-degree of node `n`
    /// implied by the equations, `sum_i z_i^+ - sum_{j < n} z_j^-`. The
    /// observed last in-degree is not an equation and is not checked.
    pub fn in_attainable_range(&self) -> bool {
        let n = self.n();
        let hi = (n - 1) as f64;
        let inside = |z: f64| z > 0.0 && z < hi;
        self.out.iter().chain(&self.inn[..n - 1]).all(|&z| inside(z))
            && inside(self.implied_last_in_degree())
    }

    /// `sum_i z_i^+ - sum_{j < n} z_j^-`, which every solution reproduces as
    /// the expected in-degree of node `n`.
    pub fn implied_last_in_degree(&self) -> f64 {
        let n = self.n();
        self.out.iter().sum::<f64>() - self.inn[..n - 1].iter().sum::<f64>()
    }
}

impl From<&BiDegree> for MomentTargets {
    fn from(d: &BiDegree) -> Self {
        Self {
            out: d.out_deg.iter().map(|&v| v as f64).collect(),
            inn: d.in_deg.iter().map(|&v| v as f64).collect(),
        }
    }
}

impl From<&NoisyBiDegree> for MomentTargets {
    fn from(z: &NoisyBiDegree) -> Self {
        Self {
            out: z.z_out.iter().map(|&v| v as f64).collect(),
            inn: z.z_in.iter().map(|&v| v as f64).collect(),
        }
    }
}
