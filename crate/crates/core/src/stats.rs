//! Small statistical helpers for validating simulation output.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{domain, Result};
use crate::model::phi_cdf;

/// `Phi^{-1}(p)` for `p` in `(0, 1)`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(format!("quantile level must be in (0, 1), got {p}")));
    }
    Ok(Normal::standard().inverse_cdf(p))
}

pub fn normal_cdf(x: f64) -> f64 {
    phi_cdf(x)
}

/// Median of a sample (mean of the middle two for even length).
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() || xs.iter().any(|x| x.is_nan()) {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample Kolmogorov-Smirnov test of `sample` against `N(0, 1)`.
pub fn ks_test_normal(sample: &[f64]) -> Result<KsResult> {
    ks_test(sample, normal_cdf)
}

/// One-sample Kolmogorov-Smirnov test against a continuous `cdf`.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if sample.is_empty() {
        return Err(domain("KS test needs a non-empty sample"));
    }
    if sample.iter().any(|x| x.is_nan()) {
        return Err(domain("KS sample contains NaN"));
    }
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (k, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((k as f64 + 1.0) / n - f).max(f - k as f64 / n);
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, v.len()),
        n: v.len(),
    })
}

/// Asymptotic p-value `Q_KS((sqrt(n) + 0.12 + 0.11 / sqrt(n)) d)` with
/// `Q_KS(t) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 t^2)`.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let t = (sn + 0.12 + 0.11 / sn) * d;
    if t < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * t * t).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Number of cells after pooling.
    pub cells: usize,
}

/// Pearson goodness of fit. Cells with expected count below `min_expected`
/// are merged into their inward neighbour, working from both ends, so
/// sparse tails form pooled cells. `df = cells - 1`.
pub fn chi_square_gof(observed: &[u64], expected: &[f64], min_expected: f64) -> Result<ChiSquareResult> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(domain("observed and expected counts must be non-empty and equal length"));
    }
    if expected.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
        return Err(domain("expected counts must be finite and non-negative"));
    }
    let mut cells: Vec<(f64, f64)> = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64, e))
        .collect();
    while cells.len() > 1 && cells[0].1 < min_expected {
        let (o, e) = cells.remove(0);
        cells[0].0 += o;
        cells[0].1 += e;
    }
    while cells.len() > 1 && cells[cells.len() - 1].1 < min_expected {
        let (o, e) = cells.pop().expect("non-empty");
        let last = cells.len() - 1;
        cells[last].0 += o;
        cells[last].1 += e;
    }
    if cells.len() < 2 {
        return Err(domain("fewer than two cells after pooling"));
    }
    if let Some(c) = cells.iter().find(|c| c.1 < min_expected) {
        return Err(domain(format!("interior cell has expected count {} < {min_expected}", c.1)));
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = cells.len() - 1;
    let dist = ChiSquared::new(df as f64).map_err(|e| domain(e.to_string()))?;
    Ok(ChiSquareResult {
        statistic,
        df,
        p_value: dist.sf(statistic),
        cells: cells.len(),
    })
}
