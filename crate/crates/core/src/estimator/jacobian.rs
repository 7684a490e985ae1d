//! The Jacobian `V = -F'(theta)` and its closed-form approximate inverse.
//!
//! Index layout (0-based): rows/columns `0..n` belong to `alpha_1..alpha_n`,
//! rows/columns `n..2n-1` to `beta_1..beta_{n-1}`. With
//! `w_ij = mu'(alpha_i + beta_j)` for `i != j`:
//!
//! ```text
//! V[i][i]         = sum_{k != i} w_ik             (i < n)
//! V[n+j][n+j]     = sum_{k != j} w_kj             (j < n-1)
//! V[i][n+j]       = V[n+j][i] = w_ij  for j != i, 0 for j == i
//! ```
//!
//! and all other entries vanish. The bordering quantities
//! `v_{2n,i} = V[i][i] - sum_{j != i} V[i][j]` equal `w_{i,n}` for `i < n-1`
//! and zero elsewhere; `v_{2n,2n} = sum_{i < n-1} w_{i,n}`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::ParameterVector;
use crate::model::EdgeMean;

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    n: usize,
    /// `n x n` row-major derivative table, zero on the diagonal.
    w: Vec<f64>,
    diag: Vec<f64>,
}

pub fn jacobian<M: EdgeMean + ?Sized>(theta: &ParameterVector, model: &M) -> JacobianMatrix {
    JacobianMatrix::new(theta.alpha(), theta.beta(), model)
}

impl JacobianMatrix {
    pub(crate) fn new<M: EdgeMean + ?Sized>(alpha: &[f64], beta: &[f64], model: &M) -> Self {
        let n = alpha.len();
        let mut w = vec![0.0; n * n];
        let mut diag = vec![0.0; 2 * n - 1];
        let mut col = vec![0.0; n];
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                if i != j {
                    let d = model.mu_prime(alpha[i] + beta[j]);
                    w[i * n + j] = d;
                    row += d;
                    col[j] += d;
                }
            }
            diag[i] = row;
        }
        diag[n..].copy_from_slice(&col[..n - 1]);
        Self { n, w, diag }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n - 1
    }

    /// `mu'(alpha_i + beta_j)` (0 when `i == j`).
    pub fn w(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    /// `v_kk` for `k in 0..2n-1`.
    pub fn diag(&self, k: usize) -> f64 {
        self.diag[k]
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Entry `V[r][c]` of the `(2n-1) x (2n-1)` matrix.
    pub fn entry(&self, r: usize, c: usize) -> f64 {
        let n = self.n;
        if r == c {
            return self.diag[r];
        }
        match (r < n, c < n) {
            (true, false) => self.w(r, c - n),
            (false, true) => self.w(c, r - n),
            _ => 0.0,
        }
    }

    /// `v_{2n,i}` for `i in 0..2n-1`.
    pub fn border(&self, i: usize) -> f64 {
        if i + 1 < self.n {
            self.w(i, self.n - 1)
        } else {
            0.0
        }
    }

    /// `v_{2n,2n} = sum_i v_{2n,i}`.
    pub fn corner(&self) -> f64 {
        (0..self.n - 1).map(|i| self.w(i, self.n - 1)).sum()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |r, c| self.entry(r, c))
    }

    /// Check every structural condition of the class `L_n(m, M)`.
    ///
    /// Equalities are compared with relative tolerance `tol`; the bounds
    /// `[m, M]` are widened by the same relative slack.
    pub fn check_class(&self, m: f64, big_m: f64, tol: f64) -> std::result::Result<(), String> {
        let n = self.n;
        let dim = self.dim();
        let close = |a: f64, b: f64| (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300);
        let (lo, hi) = (m * (1.0 - tol), big_m * (1.0 + tol));
        for i in 0..n - 1 {
            let cross: f64 = (n..dim).map(|j| self.entry(i, j)).sum();
            let b = self.diag[i] - cross;
            if !(lo <= b && b <= hi) {
                return Err(format!("row {i}: v_ii - sum cross = {b} outside [{m}, {big_m}]"));
            }
        }
        let cross_n: f64 = (n..dim).map(|j| self.entry(n - 1, j)).sum();
        if !close(self.diag[n - 1], cross_n) {
            return Err(format!("row {}: v_nn = {} but cross sum = {cross_n}", n - 1, self.diag[n - 1]));
        }
        for r in 0..dim {
            for c in 0..dim {
                let v = self.entry(r, c);
                if v != self.entry(c, r) {
                    return Err(format!("asymmetric at ({r}, {c})"));
                }
                if r == c {
                    continue;
                }
                let same_block = (r < n) == (c < n);
                if same_block && v != 0.0 {
                    return Err(format!("off-diagonal ({r}, {c}) in a diagonal block is {v}"));
                }
                if r < n && c >= n {
                    if c - n == r {
                        if v != 0.0 {
                            return Err(format!("v_(i, n+i) at row {r} is {v}, expected 0"));
                        }
                    } else if !(lo <= v && v <= hi) {
                        return Err(format!("cross entry ({r}, {c}) = {v} outside [{m}, {big_m}]"));
                    }
                }
            }
        }
        for k in n..dim {
            let col: f64 = (0..n).map(|i| self.entry(i, k)).sum();
            if !close(self.diag[k], col) {
                return Err(format!("row {k}: v_kk = {} but column sum = {col}", self.diag[k]));
            }
        }
        Ok(())
    }
}

/// Closed-form approximation `S` of `V^{-1}`:
/// `s_ij = delta_ij / v_ii + 1 / v_{2n,2n}` inside a block and
/// `-1 / v_{2n,2n}` across blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SApprox {
    n: usize,
    /// `1 / v_kk`.
    pub diag: Vec<f64>,
    /// `1 / v_{2n,2n}`.
    pub shared: f64,
}

pub fn build_s_approx(v: &JacobianMatrix) -> Result<SApprox> {
    if let Some(k) = v.diagonal().iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Singular(format!("v_kk = {} at k = {k}", v.diag(k))));
    }
    let corner = v.corner();
    if !(corner > 0.0) {
        return Err(Error::Singular(format!("v_(2n,2n) = {corner}")));
    }
    Ok(SApprox {
        n: v.n(),
        diag: v.diagonal().iter().map(|d| 1.0 / d).collect(),
        shared: 1.0 / corner,
    })
}

impl SApprox {
    pub fn entry(&self, r: usize, c: usize) -> f64 {
        let same_block = (r < self.n) == (c < self.n);
        let base = if same_block { self.shared } else { -self.shared };
        if r == c {
            base + self.diag[r]
        } else {
            base
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let d = self.diag.len();
        DMatrix::from_fn(d, d, |r, c| self.entry(r, c))
    }

    /// `S x` in `O(n)`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let x_2n: f64 = x[..n].iter().sum::<f64>() - x[n..].iter().sum::<f64>();
        x.iter()
            .enumerate()
            .map(|(k, &xk)| {
                let sign = if k < n { 1.0 } else { -1.0 };
                xk * self.diag[k] + sign * x_2n * self.shared
            })
            .collect()
    }
}

/// `max |(V^{-1} - S)_ij|`, with `V^{-1}` from an exact dense inversion.
pub fn s_approx_error(v: &JacobianMatrix) -> Result<f64> {
    let s = build_s_approx(v)?;
    let inv = v
        .dense()
        .try_inverse()
        .ok_or_else(|| Error::Singular("V is not invertible".into()))?;
    let d = v.dim();
    let mut err: f64 = 0.0;
    for c in 0..d {
        for r in 0..d {
            err = err.max((inv[(r, c)] - s.entry(r, c)).abs());
        }
    }
    Ok(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{moment_residual, MomentTargets};
    use crate::model::{Model, Probit, INV_SQRT_2PI};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_theta(n: usize, spread: f64, rng: &mut impl Rng) -> ParameterVector {
        let alpha = (0..n).map(|_| rng.random_range(-spread..spread)).collect();
        let beta = (0..n - 1).map(|_| rng.random_range(-spread..spread)).collect();
        ParameterVector::new(alpha, beta).unwrap()
    }

    #[test]
    fn uniform_case_entries() {
        let v = jacobian(&ParameterVector::zeros(3), &Probit);
        let d = v.dense();
        assert_eq!(d.nrows(), 5);
        assert_relative_eq!(v.diag(0), 0.79789, epsilon = 1e-5);
        assert_relative_eq!(d[(0, 4)], INV_SQRT_2PI, epsilon = 1e-15);
        assert_eq!(d[(0, 3)], 0.0);
        assert_eq!(d[(0, 1)], 0.0);
        assert_eq!(d[(3, 4)], 0.0);
        assert_relative_eq!(v.corner(), 2.0 * INV_SQRT_2PI, epsilon = 1e-15);
    }

    #[test]
    fn matches_finite_difference_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (n, model) in [(2, Model::Probit), (6, Model::Probit), (6, Model::Logit), (10, Model::Probit)] {
            let theta = random_theta(n, 1.0, &mut rng);
            let z = MomentTargets::new(vec![1.0; n], vec![1.0; n]).unwrap();
            let v = jacobian(&theta, &model).dense();
            let base = theta.to_free();
            let h = 1e-6;
            for c in 0..2 * n - 1 {
                let mut up = base.clone();
                up[c] += h;
                let mut dn = base.clone();
                dn[c] -= h;
                let fu = moment_residual(&ParameterVector::from_free(&up).unwrap(), &z, &model).unwrap();
                let fd = moment_residual(&ParameterVector::from_free(&dn).unwrap(), &z, &model).unwrap();
                for r in 0..2 * n - 1 {
                    // V = -F'
                    let fdv = -(fu[r] - fd[r]) / (2.0 * h);
                    let exact = v[(r, c)];
                    if exact == 0.0 {
                        assert!(fdv.abs() < 1e-9, "({r},{c}) fd={fdv}");
                    } else {
                        assert!(((fdv - exact) / exact).abs() <= 1e-5, "({r},{c}) fd={fdv} exact={exact}");
                    }
                }
            }
        }
    }

    #[test]
    fn s_closed_form_small_case() {
        // v_11 = 2 phi(0); v_(2n,2n) = w_13 + w_23 = 2 phi(0).
        let v = jacobian(&ParameterVector::zeros(3), &Probit);
        let s = build_s_approx(&v).unwrap();
        let inv_v11 = 1.0 / (2.0 * INV_SQRT_2PI);
        assert_relative_eq!(s.entry(0, 0), 2.0 * inv_v11, epsilon = 1e-12);
        assert_relative_eq!(s.entry(0, 0), 2.50663, epsilon = 1e-5);
        assert_relative_eq!(s.entry(0, 3), -1.25331, epsilon = 1e-5);
        assert_relative_eq!(s.entry(3, 4), 1.25331, epsilon = 1e-5);
        let x = [0.3, -1.0, 2.0, 0.5, 4.0];
        let dense = s.dense() * nalgebra::DVector::from_row_slice(&x);
        for (a, b) in s.apply(&x).iter().zip(dense.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn s_approx_rejects_zero_diagonal() {
        // mu' underflows to 0 far in the tail.
        let theta = ParameterVector::new(vec![-60.0, -60.0, -60.0], vec![0.0, 0.0]).unwrap();
        let v = jacobian(&theta, &Probit);
        assert!(matches!(build_s_approx(&v), Err(Error::Singular(_))));
    }

    #[test]
    fn vs_minus_identity_shrinks_with_n() {
        let resid = |n: usize| {
            let v = jacobian(&ParameterVector::zeros(n), &Probit);
            let s = build_s_approx(&v).unwrap();
            let p = v.dense() * s.dense();
            let mut e: f64 = 0.0;
            for r in 0..p.nrows() {
                for c in 0..p.ncols() {
                    let id = if r == c { 1.0 } else { 0.0 };
                    e = e.max((p[(r, c)] - id).abs());
                }
            }
            e
        };
        let (e25, e50) = (resid(25), resid(50));
        assert!(e50 < e25, "{e25} -> {e50}");
        assert!(e50 < 0.05);
    }

    #[test]
    fn border_quantities() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta = random_theta(7, 1.2, &mut rng);
        let v = jacobian(&theta, &Probit);
        let d = v.dense();
        for i in 0..v.dim() {
            let off: f64 = (0..v.dim()).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
            assert_relative_eq!(d[(i, i)] - off, v.border(i), epsilon = 1e-12);
        }
        let sum: f64 = (0..v.dim()).map(|i| v.border(i)).sum();
        assert_relative_eq!(sum, v.corner(), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn class_membership(n in 2usize..9, seed in any::<u64>(), logit in any::<bool>()) {
            let model = if logit { Model::Logit } else { Model::Probit };
            let theta = random_theta(n, 1.5, &mut ChaCha8Rng::seed_from_u64(seed));
            let v = jacobian(&theta, &model);
            let q = theta.max_abs_sum();
            let b = model.bounds(q).unwrap();
            prop_assert!(v.check_class(b.m, b.big_m, 1e-12).is_ok(), "{:?}", v.check_class(b.m, b.big_m, 1e-12));
            let d = v.dense();
            for r in 0..v.dim() {
                let off: f64 = (0..v.dim()).filter(|&c| c != r).map(|c| d[(r, c)]).sum();
                prop_assert!(d[(r, r)] >= off - 1e-12);
                for c in 0..v.dim() {
                    prop_assert!(d[(r, c)] >= 0.0);
                }
            }
        }
    }
}
