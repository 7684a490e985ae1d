use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{contract, domain, Error, Result};
use crate::graph::ParameterVector;
use crate::stats::normal_quantile;

use super::newton::FitResult;

/// Which parameter contrast a standardized statistic measures.
///
/// For a 1-based pair `(i, j)`: `Xi` is `alpha_i - alpha_j`, `Zeta` is
/// `alpha_i + beta_j`, `Eta` is `beta_i - beta_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    Xi,
    Zeta,
    Eta,
}

impl StatKind {
    pub const ALL: [StatKind; 3] = [StatKind::Xi, StatKind::Zeta, StatKind::Eta];

    pub fn name(self) -> &'static str {
        match self {
            StatKind::Xi => "xi",
            StatKind::Zeta => "zeta",
            StatKind::Eta => "eta",
        }
    }

    /// Zero-based indices into the free vector and the sign of the second.
    fn coordinates(self, n: usize, (i, j): (usize, usize)) -> Result<(usize, usize, f64)> {
        let check = |k: usize, hi: usize| -> Result<usize> {
            if k == 0 || k > hi {
                Err(contract(format!(
                    "{} index {k} is outside 1..={hi}",
                    self.name()
                )))
            } else {
                Ok(k - 1)
            }
        };
        if i == j && self != StatKind::Zeta {
            return Err(contract(format!("{} pair needs i != j", self.name())));
        }
        Ok(match self {
            StatKind::Xi => (check(i, n)?, check(j, n)?, -1.0),
            StatKind::Zeta => (check(i, n)?, n + check(j, n - 1)?, 1.0),
            StatKind::Eta => (n + check(i, n - 1)?, n + check(j, n - 1)?, -1.0),
        })
    }

    /// Whether the 1-based pair is a valid input for this statistic.
    pub fn accepts(self, n: usize, pair: (usize, usize)) -> bool {
        self.coordinates(n, pair).is_ok()
    }
}

impl fmt::Display for StatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xi" => Ok(StatKind::Xi),
            "zeta" => Ok(StatKind::Zeta),
            "eta" => Ok(StatKind::Eta),
            other => Err(domain(format!("unknown statistic '{other}' (xi, zeta, eta)"))),
        }
    }
}

/// How the standard error of a contrast is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// `sqrt(z_aa + z_bb)` from the diagonal terms only. Under the
    /// block-constant covariance the common term cancels in all three
    /// contrasts, so this is the asymptotic variance itself.
    #[default]
    DiagonalOnly,
    /// Adds the common term (shared plus privacy) to every diagonal entry
    /// before summing: `sqrt(z_aa + z_bb + 2 c)`.
    IncludeShared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub estimate: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
    /// `hi - lo`.
    pub length: f64,
    /// `(hi - lo) / 2`.
    pub half_length: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

fn contrast(theta: &[f64], a: usize, b: usize, sign: f64) -> f64 {
    theta[a] + sign * theta[b]
}

fn contrast_se(fit: &FitResult, a: usize, b: usize, mode: VarianceMode) -> Result<f64> {
    let v = fit.require_variance()?;
    let extra = match mode {
        VarianceMode::DiagonalOnly => 0.0,
        VarianceMode::IncludeShared => 2.0 * v.common_var(),
    };
    Ok((v.var_diag[a] + v.var_diag[b] + extra).sqrt())
}

/// Standardized statistics `(estimate - truth) / se` for each pair, using
/// diagonal-only standard errors.
pub fn standardized_stats(
    fit: &FitResult,
    theta_star: &ParameterVector,
    pairs: &[(usize, usize)],
    kind: StatKind,
) -> Result<Vec<f64>> {
    standardized_stats_with(fit, theta_star, pairs, kind, VarianceMode::DiagonalOnly)
}

pub fn standardized_stats_with(
    fit: &FitResult,
    theta_star: &ParameterVector,
    pairs: &[(usize, usize)],
    kind: StatKind,
    mode: VarianceMode,
) -> Result<Vec<f64>> {
    fit.require_variance()?;
    let n = fit.n();
    if theta_star.n() != n {
        return Err(contract("theta_star and fit differ in n"));
    }
    let est = fit.theta_hat.to_free();
    let truth = theta_star.to_free();
    pairs
        .iter()
        .map(|&pair| {
            let (a, b, sign) = kind.coordinates(n, pair)?;
            let se = contrast_se(fit, a, b, mode)?;
            Ok((contrast(&est, a, b, sign) - contrast(&truth, a, b, sign)) / se)
        })
        .collect()
}

/// Two-sided interval for `alpha_i - alpha_j` at `level`.
pub fn confidence_interval(fit: &FitResult, pair: (usize, usize), level: f64) -> Result<ConfidenceInterval> {
    contrast_interval(fit, StatKind::Xi, pair, level, VarianceMode::DiagonalOnly)
}

/// Two-sided interval `estimate +- z_{(1+level)/2} se` for any contrast.
pub fn contrast_interval(
    fit: &FitResult,
    kind: StatKind,
    pair: (usize, usize),
    level: f64,
    mode: VarianceMode,
) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(domain(format!("confidence level must be in (0, 1), got {level}")));
    }
    fit.require_variance()?;
    let (a, b, sign) = kind.coordinates(fit.n(), pair)?;
    let est = contrast(&fit.theta_hat.to_free(), a, b, sign);
    let se = contrast_se(fit, a, b, mode)?;
    let half = normal_quantile(0.5 + level / 2.0)? * se;
    Ok(ConfidenceInterval {
        estimate: est,
        se,
        lo: est - half,
        hi: est + half,
        length: 2.0 * half,
        half_length: half,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{fit, MomentTargets, SolveOptions};
    use crate::graph::expected_degrees;
    use crate::model::Probit;
    use crate::privacy::PrivacyParams;
    use approx::assert_relative_eq;

    fn exact_fit(theta: &ParameterVector, privacy: Option<&PrivacyParams>) -> FitResult {
        let (o, i) = expected_degrees(theta, &Probit);
        let z = MomentTargets::new(o, i).unwrap();
        fit(&z, &Probit, privacy, &SolveOptions::default()).unwrap()
    }

    #[test]
    fn interval_at_zero() {
        let f = exact_fit(&ParameterVector::zeros(100), None);
        let ci = confidence_interval(&f, (1, 2), 0.95).unwrap();
        // se = sqrt(2 u / v^2) with u = 99/4 and v = 99 phi(0).
        let se = (2.0 * 0.25 * 2.0 * std::f64::consts::PI / 99.0f64).sqrt();
        assert_relative_eq!(ci.se, se, max_relative = 1e-9);
        assert_relative_eq!(ci.half_length, 1.959963984540054 * se, max_relative = 1e-9);
        assert_relative_eq!(ci.se, 0.178138, epsilon = 1e-6);
        assert_relative_eq!(ci.length, 0.698289, epsilon = 1e-6);
        assert_relative_eq!(ci.half_length, 0.349145, epsilon = 1e-6);
        assert!(ci.contains(0.0));
        assert_relative_eq!(ci.estimate, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn length_scales_with_n() {
        let a = confidence_interval(&exact_fit(&ParameterVector::zeros(100), None), (1, 2), 0.95).unwrap();
        let b = confidence_interval(&exact_fit(&ParameterVector::zeros(200), None), (1, 2), 0.95).unwrap();
        assert_relative_eq!(b.length / a.length, (99.0f64 / 199.0).sqrt(), max_relative = 1e-6);
        assert_relative_eq!(b.length / a.length, 0.7053, epsilon = 1e-4);
    }

    #[test]
    fn statistics_vanish_at_truth() {
        let n = 12;
        let alpha: Vec<f64> = (0..n).map(|i| 0.05 * i as f64).collect();
        let theta = ParameterVector::new(alpha.clone(), alpha[..n - 1].to_vec()).unwrap();
        let f = exact_fit(&theta, None);
        for kind in StatKind::ALL {
            let s = standardized_stats(&f, &theta, &[(1, 2), (6, 7), (3, 5)], kind).unwrap();
            assert!(s.iter().all(|v| v.abs() < 1e-6), "{kind}: {s:?}");
        }
    }

    #[test]
    fn contrast_coordinates() {
        assert!(StatKind::Xi.accepts(10, (9, 10)));
        assert!(!StatKind::Eta.accepts(10, (9, 10)));
        assert!(!StatKind::Zeta.accepts(10, (9, 10)));
        assert!(StatKind::Zeta.accepts(10, (10, 9)));
        assert!(StatKind::Zeta.accepts(10, (3, 3)));
        assert!(!StatKind::Xi.accepts(10, (3, 3)));
        assert!(!StatKind::Xi.accepts(10, (0, 3)));
        assert_eq!("ETA".parse::<StatKind>().unwrap(), StatKind::Eta);
        assert!("rho".parse::<StatKind>().is_err());
    }

    #[test]
    fn include_shared_widens() {
        let p = PrivacyParams::new(2.0).unwrap();
        let f = exact_fit(&ParameterVector::zeros(50), Some(&p));
        let d = contrast_interval(&f, StatKind::Eta, (1, 2), 0.95, VarianceMode::DiagonalOnly).unwrap();
        let s = contrast_interval(&f, StatKind::Eta, (1, 2), 0.95, VarianceMode::IncludeShared).unwrap();
        assert!(s.length > d.length);
        let v = f.variance.as_ref().unwrap();
        assert_relative_eq!(s.se * s.se, d.se * d.se + 2.0 * v.common_var(), max_relative = 1e-12);
    }

    #[test]
    fn nonexistent_fit_is_rejected() {
        let z = MomentTargets::new(vec![0.0; 5], vec![2.0; 5]).unwrap();
        let f = fit(&z, &Probit, None, &SolveOptions::default()).unwrap();
        assert!(!f.exists);
        assert!(confidence_interval(&f, (1, 2), 0.95).is_err());
        assert!(standardized_stats(&f, &ParameterVector::zeros(5), &[(1, 2)], StatKind::Xi).is_err());
    }
}
