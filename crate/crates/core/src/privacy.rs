//! Discrete Laplace noise and the edge-private bi-degree release.
//!
//! Adding or removing one directed edge changes exactly one out-degree and
//! one in-degree by one, so the bi-degree map has L1 sensitivity 2. Adding
//! independent discrete Laplace noise with `lambda = exp(-epsilon / 2)` to
//! every entry is then `epsilon`-edge differentially private, and anything
//! computed from the noisy sequence inherits the guarantee.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::graph::BiDegree;

/// Global L1 sensitivity of the bi-degree sequence.
pub const BIDEGREE_SENSITIVITY: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    /// `exp(-epsilon / 2)`; underflows to 0 for astronomically large budgets.
    pub lambda: f64,
    /// `2 / (-ln lambda) = 4 / epsilon`.
    pub kappa: f64,
    pub sensitivity: u32,
}

impl PrivacyParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(domain(format!("epsilon must be finite and > 0, got {epsilon}")));
        }
        Ok(Self {
            epsilon,
            lambda: (-epsilon / BIDEGREE_SENSITIVITY as f64).exp(),
            kappa: 2.0 * BIDEGREE_SENSITIVITY as f64 / epsilon,
            sensitivity: BIDEGREE_SENSITIVITY,
        })
    }

    /// Variance `2 lambda / (1 - lambda)^2` of a single noise draw.
    pub fn noise_variance(&self) -> f64 {
        discrete_laplace_variance(self.lambda)
    }

    /// `s_n^2 = (2n - 1) 2 lambda / (1 - lambda)^2`, the variance of
    /// `sum_i e_i^+ - sum_{j < n} e_j^-`.
    pub fn aggregate_noise_variance(&self, n: usize) -> f64 {
        (2 * n - 1) as f64 * self.noise_variance()
    }
}

/// Integer noise with pmf `(1 - lambda) / (1 + lambda) * lambda^|x|`.
///
/// Sampled as the difference of two independent geometric counts (failures
/// before the first success, success probability `1 - lambda`), each drawn
/// by inversion as `floor(ln U / ln lambda)`.
#[derive(Debug, Clone, Copy)]
pub struct DiscreteLaplace {
    lambda: f64,
    ln_lambda: f64,
}

impl DiscreteLaplace {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(domain(format!("lambda must lie in (0, 1), got {lambda}")));
        }
        Ok(Self::unchecked(lambda))
    }

    /// Accepts `lambda = 0`, where every draw is 0.
    fn unchecked(lambda: f64) -> Self {
        Self {
            lambda,
            ln_lambda: lambda.ln(),
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn geometric<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        // U in (0, 1] keeps ln U finite.
        let u = 1.0 - rng.random::<f64>();
        (u.ln() / self.ln_lambda).floor() as i64
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let a = self.geometric(rng);
        let b = self.geometric(rng);
        a - b
    }

    pub fn pmf(&self, x: i64) -> f64 {
        discrete_laplace_pmf(self.lambda, x)
    }
}

/// One discrete Laplace draw with parameter `lambda`.
pub fn discrete_laplace_sample<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<i64> {
    Ok(DiscreteLaplace::new(lambda)?.sample(rng))
}

pub fn discrete_laplace_pmf(lambda: f64, x: i64) -> f64 {
    (1.0 - lambda) / (1.0 + lambda) * lambda.powf(x.unsigned_abs() as f64)
}

pub fn discrete_laplace_variance(lambda: f64) -> f64 {
    2.0 * lambda / ((1.0 - lambda) * (1.0 - lambda))
}

/// A privatized bi-degree sequence `z = d + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyBiDegree {
    pub z_out: Vec<i64>,
    pub z_in: Vec<i64>,
    pub params: PrivacyParams,
    /// Seed of the noise stream, when the release came from a seeded run.
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct NoisyRecord {
    n: usize,
    epsilon: f64,
    z_out: Vec<i64>,
    z_in: Vec<i64>,
    seed: Option<u64>,
}

impl NoisyBiDegree {
    pub fn n(&self) -> usize {
        self.z_out.len()
    }

    /// `{"n", "epsilon", "z_out", "z_in", "seed"}`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&NoisyRecord {
            n: self.n(),
            epsilon: self.params.epsilon,
            z_out: self.z_out.clone(),
            z_in: self.z_in.clone(),
            seed: self.seed,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: NoisyRecord = serde_json::from_str(text)?;
        if rec.z_out.len() != rec.n || rec.z_in.len() != rec.n {
            return Err(domain(format!(
                "degree vectors have lengths {} and {}, header says n = {}",
                rec.z_out.len(),
                rec.z_in.len(),
                rec.n
            )));
        }
        if rec.n < 2 {
            return Err(domain(format!("need at least 2 nodes, got {}", rec.n)));
        }
        Ok(Self {
            z_out: rec.z_out,
            z_in: rec.z_in,
            params: PrivacyParams::new(rec.epsilon)?,
            seed: rec.seed,
        })
    }
}

/// Release `d` under `epsilon`-edge differential privacy.
///
/// Draws `e_1^+ .. e_n^+` and then `e_1^- .. e_n^-` from the stream; all `n`
/// in-degrees are noised even though the estimator later drops the last one.
pub fn privatize<R: Rng + ?Sized>(d: &BiDegree, epsilon: f64, rng: &mut R) -> Result<NoisyBiDegree> {
    let params = PrivacyParams::new(epsilon)?;
    let noise = DiscreteLaplace::unchecked(params.lambda);
    let z_out = d.out_deg.iter().map(|&v| v as i64 + noise.sample(rng)).collect();
    let z_in = d.in_deg.iter().map(|&v| v as i64 + noise.sample(rng)).collect();
    Ok(NoisyBiDegree {
        z_out,
        z_in,
        params,
        seed: None,
    })
}

/// `sqrt(n ln n) + (4 / epsilon) sqrt(ln n)`, a high-probability bound on
/// `max |z - E z|` over all noisy degrees.
pub fn deviation_bound(n: usize, epsilon: f64) -> Result<f64> {
    if n < 2 {
        return Err(domain(format!("need n >= 2, got {n}")));
    }
    if !(epsilon > 0.0) || epsilon.is_nan() {
        return Err(domain(format!("epsilon must be > 0, got {epsilon}")));
    }
    let ln_n = (n as f64).ln();
    Ok((n as f64 * ln_n).sqrt() + 4.0 / epsilon * ln_n.sqrt())
}

/// `max(max_i |z_i^+ - E d_i^+|, max_j |z_j^- - E d_j^-|)`.
pub fn max_deviation(z: &NoisyBiDegree, expected_out: &[f64], expected_in: &[f64]) -> f64 {
    let dev = |zs: &[i64], es: &[f64]| {
        zs.iter()
            .zip(es)
            .fold(0.0f64, |m, (&z, &e)| m.max((z as f64 - e).abs()))
    };
    dev(&z.z_out, expected_out).max(dev(&z.z_in, expected_in))
}
