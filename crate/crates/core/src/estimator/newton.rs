use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, NonExistence, Result};
use crate::graph::ParameterVector;
use crate::model::EdgeMean;
use crate::privacy::PrivacyParams;

use super::jacobian::JacobianMatrix;
use super::residual::residual_into;
use super::variance::{variance_estimates, VarianceEstimate};
use super::MomentTargets;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iter: usize,
    /// Converged once `|F|_inf <= residual_tol_per_node * n`.
    pub residual_tol_per_node: f64,
    /// Converged once `|step|_inf <= step_tol`.
    pub step_tol: f64,
    /// Declared divergent once `|theta|_inf` exceeds this.
    pub divergence_guard: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            residual_tol_per_node: 1e-8,
            step_tol: 1e-10,
            divergence_guard: 50.0,
        }
    }
}

impl SolveOptions {
    pub fn residual_tol(&self, n: usize) -> f64 {
        self.residual_tol_per_node * n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: String,
    /// Privacy budget of the input, when it was a private release.
    pub epsilon: Option<f64>,
    /// Final iterate; meaningful only when `exists`.
    pub theta_hat: ParameterVector,
    pub converged: bool,
    pub exists: bool,
    pub failure: Option<NonExistence>,
    pub iterations: usize,
    /// `|F(theta_hat)|_inf`.
    pub residual_norm: f64,
    pub tolerance: f64,
    pub variance: Option<VarianceEstimate>,
}

impl FitResult {
    pub fn n(&self) -> usize {
        self.theta_hat.n()
    }

    /// `Ok(self)` when the estimate exists, otherwise the non-existence error.
    pub fn into_existing(self) -> Result<Self> {
        match self.failure {
            None if self.exists => Ok(self),
            reason => Err(Error::NonExistent {
                reason: reason.unwrap_or(NonExistence::Stalled),
            }),
        }
    }

    pub(crate) fn require_variance(&self) -> Result<&VarianceEstimate> {
        if !self.exists {
            return Err(contract("the estimate does not exist"));
        }
        self.variance
            .as_ref()
            .ok_or_else(|| contract("fit carries no variance estimate"))
    }

    /// `{"n", "model", "epsilon", "alpha", "beta", "se_alpha", "se_beta",
    /// "converged", "exists", "iterations", "residual_norm"}`.
    ///
    /// Standard errors are `sqrt(z_kk)`; `se_beta` has length `n` with the
    /// pinned last entry 0. Both are empty when no variance is attached.
    pub fn to_json(&self) -> Result<String> {
        let n = self.n();
        let (se_alpha, se_beta) = match &self.variance {
            Some(v) => {
                let se: Vec<f64> = v.var_diag.iter().map(|z| z.sqrt()).collect();
                let mut beta = se[n..].to_vec();
                beta.push(0.0);
                (se[..n].to_vec(), beta)
            }
            None => (Vec::new(), Vec::new()),
        };
        let record = FitRecord {
            n,
            model: self.model.clone(),
            epsilon: self.epsilon,
            alpha: self.theta_hat.alpha().to_vec(),
            beta: self.theta_hat.beta().to_vec(),
            se_alpha,
            se_beta,
            converged: self.converged,
            exists: self.exists,
            iterations: self.iterations,
            residual_norm: self.residual_norm,
        };
        Ok(serde_json::to_string_pretty(&record)?)
    }
}

/// Wire form of a [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub n: usize,
    pub model: String,
    pub epsilon: Option<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub se_alpha: Vec<f64>,
    pub se_beta: Vec<f64>,
    pub converged: bool,
    pub exists: bool,
    pub iterations: usize,
    pub residual_norm: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solve the moment equations by full Newton steps from `init`.
///
/// Each step solves `V delta = F` exactly by LU with partial pivoting and
/// sets `theta <- theta + delta`. Statistical failures (targets outside the
/// attainable range, the iteration cap, the divergence guard, a singular
/// system) are reported through `FitResult::exists`/`failure`; a NaN in the
/// residual is an `Error::NumericalFailure`.
pub fn newton_solve<M: EdgeMean + ?Sized>(
    z: &MomentTargets,
    model: &M,
    init: &ParameterVector,
    opts: &SolveOptions,
) -> Result<FitResult> {
    let n = z.n();
    if init.n() != n {
        return Err(contract(format!(
            "initial point has n = {} but degrees have n = {n}",
            init.n()
        )));
    }
    let tol = opts.residual_tol(n);
    let mut theta = init.clone();
    let mut free = theta.to_free();
    let mut f = vec![0.0; 2 * n - 1];

    let finish = |theta: ParameterVector,
                  converged: bool,
                  failure: Option<NonExistence>,
                  iterations: usize,
                  residual_norm: f64| FitResult {
        model: model.name().to_string(),
        epsilon: None,
        theta_hat: theta,
        converged,
        exists: failure.is_none(),
        failure,
        iterations,
        residual_norm,
        tolerance: tol,
        variance: None,
    };

    let eval = |theta: &ParameterVector, f: &mut [f64]| -> Result<f64> {
        residual_into(theta.alpha(), theta.beta(), z, model, f);
        if f.iter().any(|v| v.is_nan()) {
            return Err(Error::NumericalFailure("NaN in moment residual".into()));
        }
        Ok(inf_norm(f))
    };

    let mut res = eval(&theta, &mut f)?;
    if !z.in_attainable_range() {
        return Ok(finish(theta, false, Some(NonExistence::Range), 0, res));
    }

    let mut iterations = 0;
    loop {
        if res <= tol {
            return Ok(finish(theta, true, None, iterations, res));
        }
        if iterations >= opts.max_iter {
            return Ok(finish(theta, false, Some(NonExistence::IterationCap), iterations, res));
        }
        let v = JacobianMatrix::new(theta.alpha(), theta.beta(), model).dense();
        let rhs = DVector::from_column_slice(&f);
        let step = match v.lu().solve(&rhs) {
            Some(s) if s.iter().all(|x| x.is_finite()) => s,
            _ => return Ok(finish(theta, false, Some(NonExistence::Singular), iterations, res)),
        };
        for (t, s) in free.iter_mut().zip(step.iter()) {
            *t += s;
        }
        theta.set_free(&free);
        iterations += 1;
        if theta.max_abs() > opts.divergence_guard {
            return Ok(finish(theta, false, Some(NonExistence::Diverged), iterations, res));
        }
        res = eval(&theta, &mut f)?;
        if inf_norm(step.as_slice()) <= opts.step_tol {
            let failure = (res > tol).then_some(NonExistence::Stalled);
            return Ok(finish(theta, true, failure, iterations, res));
        }
    }
}

/// Newton solve from zero, then attach variance estimates when the
/// estimate exists. `privacy` adds the aggregate-noise term.
pub fn fit<M: EdgeMean + ?Sized>(
    z: &MomentTargets,
    model: &M,
    privacy: Option<&PrivacyParams>,
    opts: &SolveOptions,
) -> Result<FitResult> {
    let mut res = newton_solve(z, model, &ParameterVector::zeros(z.n()), opts)?;
    res.epsilon = privacy.map(|p| p.epsilon);
    if res.exists {
        let (_, var) = variance_estimates(&res.theta_hat, model, privacy)?;
        res.variance = Some(var);
    }
    Ok(res)
}

/// Quantities from the Newton–Kantorovich style existence argument,
/// evaluated at the true parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceDiagnostics {
    /// `|V(theta*)^{-1} F(theta*)|_inf`.
    pub r: f64,
    /// `c1 (2n-1) M^2 K1 / (2 m^3 n^2) + K2 / ((n-1) m)` with `c1 = 1`.
    pub rho: f64,
    pub rho_r: f64,
    /// `4 eta1 (n - 1)`.
    pub k1: f64,
    /// `2 eta1 (n - 1)`.
    pub k2: f64,
    pub m: f64,
    pub big_m: f64,
    pub eta1: f64,
    /// `rho r < 1/2`.
    pub contraction: bool,
}

/// Evaluate `r`, `rho` and `rho r` at `theta_star` with derivative bounds
/// taken over the radius `q`. The universal constant is set to one, so this
/// is an inspection aid rather than a guarantee.
pub fn convergence_diagnostics<M: EdgeMean + ?Sized>(
    z: &MomentTargets,
    theta_star: &ParameterVector,
    model: &M,
    q: f64,
) -> Result<ConvergenceDiagnostics> {
    let n = z.n();
    if theta_star.n() != n {
        return Err(contract("theta_star and degrees differ in n"));
    }
    let b = model.bounds(q)?;
    let mut f = vec![0.0; 2 * n - 1];
    residual_into(theta_star.alpha(), theta_star.beta(), z, model, &mut f);
    let r = if inf_norm(&f) == 0.0 {
        0.0
    } else {
        let v = JacobianMatrix::new(theta_star.alpha(), theta_star.beta(), model).dense();
        let x = v
            .lu()
            .solve(&DVector::from_column_slice(&f))
            .ok_or_else(|| Error::Singular("V(theta*) is singular".into()))?;
        inf_norm(x.as_slice())
    };
    let nf = n as f64;
    let k1 = 4.0 * b.eta1 * (nf - 1.0);
    let k2 = 2.0 * b.eta1 * (nf - 1.0);
    let rho = (2.0 * nf - 1.0) * b.big_m.powi(2) * k1 / (2.0 * b.m.powi(3) * nf * nf)
        + k2 / ((nf - 1.0) * b.m);
    Ok(ConvergenceDiagnostics {
        r,
        rho,
        rho_r: rho * r,
        k1,
        k2,
        m: b.m,
        big_m: b.big_m,
        eta1: b.eta1,
        contraction: rho * r < 0.5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::expected_degrees;
    use crate::model::{Logit, Probit, PROBIT_ETA1};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_design(n: usize, l: f64) -> ParameterVector {
        let a: Vec<f64> = (0..n).map(|i| (n - 1 - i) as f64 * l / (n - 1) as f64).collect();
        ParameterVector::new(a.clone(), a[..n - 1].to_vec()).unwrap()
    }

    fn oracle_targets<M: EdgeMean>(theta: &ParameterVector, model: &M) -> MomentTargets {
        let (o, i) = expected_degrees(theta, model);
        MomentTargets::new(o, i).unwrap()
    }

    #[test]
    fn recovers_linear_design_from_expected_degrees() {
        let truth = linear_design(30, 1.0);
        let z = oracle_targets(&truth, &Probit);
        let fit = newton_solve(&z, &Probit, &ParameterVector::zeros(30), &SolveOptions::default()).unwrap();
        assert!(fit.exists && fit.converged);
        let err = truth
            .to_free()
            .iter()
            .zip(fit.theta_hat.to_free())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-8, "err {err}");
        assert!(fit.residual_norm <= fit.tolerance);
    }

    #[test]
    fn logit_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 15;
        let alpha = (0..n).map(|_| rng.random_range(-0.7..0.7)).collect();
        let beta = (0..n - 1).map(|_| rng.random_range(-0.7..0.7)).collect();
        let truth = ParameterVector::new(alpha, beta).unwrap();
        let z = oracle_targets(&truth, &Logit);
        let fit = newton_solve(&z, &Logit, &ParameterVector::zeros(n), &SolveOptions::default()).unwrap();
        assert!(fit.exists);
        for (a, b) in truth.to_free().iter().zip(fit.theta_hat.to_free()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_out_degree_does_not_exist() {
        let n = 100;
        let mut out = vec![50.0; n];
        out[0] = 0.0;
        let z = MomentTargets::new(out, vec![50.0; n]).unwrap();
        let fit = newton_solve(&z, &Probit, &ParameterVector::zeros(n), &SolveOptions::default()).unwrap();
        assert!(!fit.exists);
        assert_eq!(fit.failure, Some(NonExistence::Range));
        assert!(matches!(
            fit.into_existing(),
            Err(Error::NonExistent { reason: NonExistence::Range })
        ));
    }

    #[test]
    fn last_in_degree_is_not_range_checked() {
        let n = 6;
        let truth = linear_design(n, 0.5);
        let (o, mut i) = expected_degrees(&truth, &Probit);
        i[n - 1] = -3.0;
        let z = MomentTargets::new(o, i).unwrap();
        let fit = newton_solve(&z, &Probit, &ParameterVector::zeros(n), &SolveOptions::default()).unwrap();
        assert!(fit.exists);
    }

    #[test]
    fn implied_last_in_degree_out_of_range() {
        // Each target is attainable alone, but together they force node n
        // to have expected in-degree 5 - 1 = 4 > n - 1.
        let n = 5;
        let z = MomentTargets::new(vec![3.5; n], vec![3.5, 3.5, 3.5, 3.5, 0.0]).unwrap();
        assert_relative_eq!(z.implied_last_in_degree(), 17.5 - 14.0);
        assert!(z.in_attainable_range());
        let z = MomentTargets::new(vec![3.9; n], vec![3.5, 3.5, 3.5, 3.0, 0.0]).unwrap();
        assert_relative_eq!(z.implied_last_in_degree(), 19.5 - 13.5);
        assert!(!z.in_attainable_range());
        let fit = newton_solve(&z, &Probit, &ParameterVector::zeros(n), &SolveOptions::default()).unwrap();
        assert_eq!(fit.failure, Some(NonExistence::Range));
    }

    #[test]
    fn iteration_cap_and_guard() {
        let truth = linear_design(20, 1.5);
        let z = oracle_targets(&truth, &Probit);
        let opts = SolveOptions {
            max_iter: 1,
            ..SolveOptions::default()
        };
        let fit = newton_solve(&z, &Probit, &ParameterVector::zeros(20), &opts).unwrap();
        assert_eq!(fit.failure, Some(NonExistence::IterationCap));
        assert!(!fit.exists);

        let opts = SolveOptions {
            divergence_guard: 0.1,
            ..SolveOptions::default()
        };
        let fit = newton_solve(&z, &Probit, &ParameterVector::zeros(20), &opts).unwrap();
        assert_eq!(fit.failure, Some(NonExistence::Diverged));
    }

    #[test]
    fn singular_system_is_non_existence() {
        // Far in the tail every mu' underflows and V is the zero matrix.
        let n = 4;
        let z = MomentTargets::new(vec![1.0; n], vec![1.0; n]).unwrap();
        let init = ParameterVector::new(vec![-45.0; n], vec![0.0; n - 1]).unwrap();
        let fit = newton_solve(&z, &Probit, &init, &SolveOptions::default()).unwrap();
        assert_eq!(fit.failure, Some(NonExistence::Singular));
    }

    #[test]
    fn shifted_starts_reach_the_same_estimate() {
        let truth = linear_design(25, 0.8);
        let z = oracle_targets(&truth, &Probit);
        let opts = SolveOptions::default();
        let base = newton_solve(&z, &Probit, &ParameterVector::zeros(25), &opts).unwrap();
        for c in [-0.6, 0.4, 1.0] {
            // Shift alpha up and beta down by c (beta_n stays pinned).
            let a = vec![c; 25];
            let b = vec![-c; 24];
            let init = ParameterVector::new(a, b).unwrap();
            let fit = newton_solve(&z, &Probit, &init, &opts).unwrap();
            assert!(fit.exists);
            for (x, y) in base.theta_hat.to_free().iter().zip(fit.theta_hat.to_free()) {
                assert!((x - y).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn diagnostics_at_truth() {
        let n = 100;
        let truth = ParameterVector::zeros(n);
        let z = oracle_targets(&truth, &Probit);
        let d = convergence_diagnostics(&z, &truth, &Probit, 0.0).unwrap();
        assert_eq!(d.r, 0.0);
        assert_eq!(d.rho_r, 0.0);
        assert!(d.contraction);
        assert_relative_eq!(d.k1, 4.0 * PROBIT_ETA1 * 99.0, epsilon = 1e-12);
        assert_relative_eq!(d.k1, 95.82, epsilon = 5e-3);
        assert_relative_eq!(d.k2, 2.0 * PROBIT_ETA1 * 99.0, epsilon = 1e-12);
    }

    #[test]
    fn diagnostics_on_noisy_targets() {
        let n = 40;
        let truth = ParameterVector::zeros(n);
        let mut o = vec![19.5; n];
        o[3] = 23.0;
        let z = MomentTargets::new(o, vec![19.5; n]).unwrap();
        let d = convergence_diagnostics(&z, &truth, &Probit, 0.0).unwrap();
        assert!(d.r > 0.0 && d.r.is_finite());
        assert_relative_eq!(d.rho_r, d.rho * d.r);
    }
}
