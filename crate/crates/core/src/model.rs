//! Edge-mean functions `mu(alpha_i + beta_j) = E[a_ij]`.
//!
//! Every model in the family is described by a strictly increasing map from
//! the linear predictor `x = alpha_i + beta_j` into `(0, 1)`, together with
//! its first two derivatives. The estimator only ever touches a model through
//! the [`EdgeMean`] trait, so any new instance plugs in without changes
//! elsewhere.
//!
//! The Probit instance evaluates the standard normal CDF as
//! `Phi(x) = erfc(-x / sqrt(2)) / 2`, using the complementary error function
//! from `libm` (the musl/FreeBSD implementation, accurate to about one ulp
//! over the whole real line). Going through `erfc`
//! rather than `1 - erf` keeps full relative precision in the lower tail.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// `1 / sqrt(2 pi)`, the standard normal density at zero.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `1 / sqrt(2 pi e)`, the largest magnitude of the Probit second derivative.
pub const PROBIT_ETA1: f64 = 0.241_970_724_519_143_37;

/// Step of the grid used to bound derivatives of models without closed forms.
pub const BOUND_GRID_STEP: f64 = 1e-3;

/// Outward rounding applied to grid-computed bounds.
pub const BOUND_PAD: f64 = 1e-9;

/// A mean function for Bernoulli-type edges driven by `alpha_i + beta_j`.
///
/// Implementations must be strictly increasing with values in `(0, 1)`.
/// Inputs are assumed finite; use the checked wrappers (e.g. [`probit_mu`])
/// at API boundaries.
pub trait EdgeMean: Send + Sync {
    fn name(&self) -> &'static str;

    fn mu(&self, x: f64) -> f64;

    fn mu_prime(&self, x: f64) -> f64;

    fn mu_second(&self, x: f64) -> f64;

    /// Derivative bounds over `[-q, q]`.
    ///
    /// The default scans a grid with step [`BOUND_GRID_STEP`], refines the
    /// interior extrema with a golden-section search and pads the result
    /// outward by [`BOUND_PAD`].
    fn bounds(&self, q: f64) -> Result<ModelBounds> {
        check_radius(q)?;
        Ok(grid_bounds(self, q))
    }
}

/// Derivative bounds `m <= mu'(x) <= M`, `|mu''(x)| <= eta1` on `|x| <= q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelBounds {
    pub q: f64,
    /// Lower bound `m` on the first derivative.
    pub m: f64,
    /// Upper bound `M` on the first derivative.
    pub big_m: f64,
    /// Bound `eta1` on the magnitude of the second derivative.
    pub eta1: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Probit;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Logit;

/// Standard normal CDF.
pub(crate) fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub(crate) fn phi_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

impl EdgeMean for Probit {
    fn name(&self) -> &'static str {
        "probit"
    }

    fn mu(&self, x: f64) -> f64 {
        phi_cdf(x)
    }

    fn mu_prime(&self, x: f64) -> f64 {
        phi_pdf(x)
    }

    fn mu_second(&self, x: f64) -> f64 {
        -x * phi_pdf(x)
    }

    fn bounds(&self, q: f64) -> Result<ModelBounds> {
        check_radius(q)?;
        // phi is even and decreasing on [0, inf); |x phi(x)| peaks at |x| = 1.
        Ok(ModelBounds {
            q,
            m: phi_pdf(q),
            big_m: INV_SQRT_2PI,
            eta1: PROBIT_ETA1,
        })
    }
}

impl EdgeMean for Logit {
    fn name(&self) -> &'static str {
        "logit"
    }

    fn mu(&self, x: f64) -> f64 {
        if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        }
    }

    fn mu_prime(&self, x: f64) -> f64 {
        let e = (-x.abs()).exp();
        e / ((1.0 + e) * (1.0 + e))
    }

    fn mu_second(&self, x: f64) -> f64 {
        let p = self.mu(x);
        self.mu_prime(x) * (1.0 - 2.0 * p)
    }
}

/// Model selector used by configuration files and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    #[default]
    Probit,
    Logit,
}

impl Model {
    pub const ALL: [Model; 2] = [Model::Probit, Model::Logit];
}

impl EdgeMean for Model {
    fn name(&self) -> &'static str {
        match self {
            Model::Probit => Probit.name(),
            Model::Logit => Logit.name(),
        }
    }

    fn mu(&self, x: f64) -> f64 {
        match self {
            Model::Probit => Probit.mu(x),
            Model::Logit => Logit.mu(x),
        }
    }

    fn mu_prime(&self, x: f64) -> f64 {
        match self {
            Model::Probit => Probit.mu_prime(x),
            Model::Logit => Logit.mu_prime(x),
        }
    }

    fn mu_second(&self, x: f64) -> f64 {
        match self {
            Model::Probit => Probit.mu_second(x),
            Model::Logit => Logit.mu_second(x),
        }
    }

    fn bounds(&self, q: f64) -> Result<ModelBounds> {
        match self {
            Model::Probit => Probit.bounds(q),
            Model::Logit => Logit.bounds(q),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "probit" => Ok(Model::Probit),
            "logit" => Ok(Model::Logit),
            other => Err(domain(format!(
                "unknown model '{other}' (expected one of: probit, logit)"
            ))),
        }
    }
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("argument must be finite, got {x}")))
    }
}

fn check_radius(q: f64) -> Result<()> {
    if q.is_finite() && q >= 0.0 {
        Ok(())
    } else {
        Err(domain(format!("radius Q must be finite and >= 0, got {q}")))
    }
}

/// `Phi(x)`, the Probit edge probability.
pub fn probit_mu(x: f64) -> Result<f64> {
    check_finite(x)?;
    Ok(Probit.mu(x))
}

/// `phi(x) = exp(-x^2 / 2) / sqrt(2 pi)`.
pub fn probit_mu_prime(x: f64) -> Result<f64> {
    check_finite(x)?;
    Ok(Probit.mu_prime(x))
}

/// `-x phi(x)`.
pub fn probit_mu_second(x: f64) -> Result<f64> {
    check_finite(x)?;
    Ok(Probit.mu_second(x))
}

/// Derivative bounds of `model` over the radius `q`.
pub fn bounds_for<M: EdgeMean + ?Sized>(model: &M, q: f64) -> Result<ModelBounds> {
    model.bounds(q)
}

fn grid_bounds<M: EdgeMean + ?Sized>(model: &M, q: f64) -> ModelBounds {
    let steps = ((2.0 * q) / BOUND_GRID_STEP).ceil().max(1.0) as usize;
    let h = 2.0 * q / steps as f64;
    let xs: Vec<f64> = (0..=steps).map(|k| -q + k as f64 * h).collect();

    let slope = |x: f64| model.mu_prime(x);
    let curv = |x: f64| model.mu_second(x).abs();

    let (lo, _) = refined_extremum(&xs, |x| -slope(x));
    let (hi, _) = refined_extremum(&xs, slope);
    let (_, eta) = refined_extremum(&xs, curv);
    let min_slope = slope(lo);
    let max_slope = slope(hi);

    ModelBounds {
        q,
        // Relative padding keeps tiny tail slopes strictly positive.
        m: (min_slope - BOUND_PAD).max(min_slope * (1.0 - BOUND_PAD)),
        big_m: max_slope + BOUND_PAD,
        eta1: eta + BOUND_PAD,
    }
}

/// Maximizer of `f` over the grid, polished by golden-section search when
/// the best grid point is interior.
fn refined_extremum(xs: &[f64], f: impl Fn(f64) -> f64) -> (f64, f64) {
    let (k, best) = xs
        .iter()
        .enumerate()
        .map(|(k, &x)| (k, f(x)))
        .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
    if k == 0 || k + 1 == xs.len() {
        return (xs[k], best);
    }
    let (mut a, mut b) = (xs[k - 1], xs[k + 1]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..60 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    let x = 0.5 * (a + b);
    let v = f(x);
    if v >= best {
        (x, v)
    } else {
        (xs[k], best)
    }
}
