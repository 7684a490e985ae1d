use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::graph::ParameterVector;
use crate::model::EdgeMean;
use crate::privacy::PrivacyParams;

use super::jacobian::JacobianMatrix;

/// Plug-in edge variances and their aggregates at a fitted point.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceInputs {
    n: usize,
    /// `u_ij = mu(x)(1 - mu(x))`, row-major, zero on the diagonal.
    u: Vec<f64>,
    /// Row sums for `k < n`, column sums of the first `n - 1` columns after.
    pub u_diag: Vec<f64>,
    /// `sum_{i != n} u_{i,n}`, the variance of the last in-degree.
    pub u_2n2n: f64,
    /// Aggregate noise variance; 0 without privacy.
    pub s_n_sq: f64,
}

impl VarianceInputs {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn u(&self, i: usize, j: usize) -> f64 {
        self.u[i * self.n + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    /// `z_kk = u_kk / v_kk^2` for `k = 0..2n-1`.
    pub var_diag: Vec<f64>,
    /// `u_{2n,2n} / v_{2n,2n}^2`.
    pub shared_var: f64,
    /// `s_n^2 / v_{2n,2n}^2`; 0 for raw degrees.
    pub privacy_var: f64,
}

impl VarianceEstimate {
    pub fn n(&self) -> usize {
        self.var_diag.len().div_ceil(2)
    }

    /// Off-diagonal magnitude of the asymptotic covariance.
    pub fn common_var(&self) -> f64 {
        self.shared_var + self.privacy_var
    }
}

/// Plug-in estimates of the asymptotic covariance components at
/// `theta_hat`. With `privacy`, the aggregate-noise term is included.
pub fn variance_estimates<M: EdgeMean + ?Sized>(
    theta_hat: &ParameterVector,
    model: &M,
    privacy: Option<&PrivacyParams>,
) -> Result<(VarianceInputs, VarianceEstimate)> {
    let n = theta_hat.n();
    let (alpha, beta) = (theta_hat.alpha(), theta_hat.beta());
    if alpha.iter().chain(beta).any(|x| !x.is_finite()) {
        return Err(contract("theta_hat must be finite"));
    }
    let mut u = vec![0.0; n * n];
    let mut u_diag = vec![0.0; 2 * n - 1];
    let mut col = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let p = model.mu(alpha[i] + beta[j]);
                let var = p * (1.0 - p);
                u[i * n + j] = var;
                u_diag[i] += var;
                col[j] += var;
            }
        }
    }
    u_diag[n..].copy_from_slice(&col[..n - 1]);
    let u_2n2n = col[n - 1];
    let s_n_sq = privacy.map_or(0.0, |p| p.aggregate_noise_variance(n));

    let v = JacobianMatrix::new(alpha, beta, model);
    if let Some(k) = v.diagonal().iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Singular(format!("v_kk = {} at k = {k}", v.diag(k))));
    }
    let corner = v.corner();
    if !(corner > 0.0) {
        return Err(Error::Singular(format!("v_(2n,2n) = {corner}")));
    }
    let var_diag = u_diag
        .iter()
        .zip(v.diagonal())
        .map(|(u, d)| u / (d * d))
        .collect();
    let est = VarianceEstimate {
        var_diag,
        shared_var: u_2n2n / (corner * corner),
        privacy_var: s_n_sq / (corner * corner),
    };
    let inputs = VarianceInputs {
        n,
        u,
        u_diag,
        u_2n2n,
        s_n_sq,
    };
    Ok((inputs, est))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Logit, Probit};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn closed_form_at_zero() {
        let theta = ParameterVector::zeros(100);
        let (inp, est) = variance_estimates(&theta, &Probit, None).unwrap();
        // u = 1/4, v = 1/sqrt(2 pi) per pair.
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let expect = 99.0 * 0.25 / (99.0 * phi0).powi(2);
        assert_relative_eq!(expect, 0.015867, epsilon = 5e-7);
        for z in &est.var_diag {
            assert_relative_eq!(*z, expect, max_relative = 1e-12);
        }
        assert_eq!(est.privacy_var, 0.0);
        assert_eq!(inp.s_n_sq, 0.0);
        assert_relative_eq!(inp.u_2n2n, 99.0 * 0.25, max_relative = 1e-12);
        assert_relative_eq!(est.shared_var, 99.0 * 0.25 / (99.0 * phi0).powi(2), max_relative = 1e-12);
    }

    #[test]
    fn privacy_term() {
        let theta = ParameterVector::zeros(100);
        let p = PrivacyParams::new(2.0).unwrap();
        let (inp, est) = variance_estimates(&theta, &Probit, Some(&p)).unwrap();
        let lam = (-1.0f64).exp();
        assert_relative_eq!(inp.s_n_sq, 199.0 * 2.0 * lam / (1.0 - lam).powi(2), max_relative = 1e-12);
        assert_relative_eq!(inp.s_n_sq, 366.428, epsilon = 1e-3);
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert_relative_eq!(est.privacy_var, inp.s_n_sq / (99.0 * phi0).powi(2), max_relative = 1e-12);
    }

    #[test]
    fn underflowed_derivatives_are_singular() {
        let theta = ParameterVector::new(vec![-60.0; 3], vec![0.0; 2]).unwrap();
        assert!(matches!(
            variance_estimates(&theta, &Probit, None),
            Err(Error::Singular(_))
        ));
    }

    proptest! {
        #[test]
        fn components_nonnegative_and_bounded(
            n in 2usize..12,
            seed in proptest::collection::vec(-1.0f64..1.0, 24),
        ) {
            let alpha = seed[..n].to_vec();
            let beta = seed[12..12 + n - 1].to_vec();
            let theta = ParameterVector::new(alpha, beta).unwrap();
            let p = PrivacyParams::new(1.0).unwrap();
            let (inp, est) = variance_estimates(&theta, &Logit, Some(&p)).unwrap();
            prop_assert!(est.var_diag.iter().all(|&z| z >= 0.0));
            prop_assert!(est.shared_var >= 0.0 && est.privacy_var >= 0.0);
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        lo = lo.min(inp.u(i, j));
                        hi = hi.max(inp.u(i, j));
                    }
                }
            }
            let k = (n - 1) as f64;
            for &u in &inp.u_diag {
                prop_assert!(u >= k * lo * (1.0 - 1e-12) && u <= k * hi * (1.0 + 1e-12));
            }
        }
    }
}
