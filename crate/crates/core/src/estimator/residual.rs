use crate::error::{contract, Result};
use crate::graph::ParameterVector;
use crate::model::EdgeMean;

use super::MomentTargets;

/// `F(theta)`: observed minus expected degrees, length `2n - 1`.
///
/// Entries `0..n` are the out-degree equations; entries `n..2n-1` are the
/// in-degree equations of nodes `1..n-1` (the last is dropped).
pub fn moment_residual<M: EdgeMean + ?Sized>(
    theta: &ParameterVector,
    z: &MomentTargets,
    model: &M,
) -> Result<Vec<f64>> {
    if theta.n() != z.n() {
        return Err(contract(format!(
            "parameter vector has n = {} but degrees have n = {}",
            theta.n(),
            z.n()
        )));
    }
    let mut out = vec![0.0; 2 * z.n() - 1];
    residual_into(theta.alpha(), theta.beta(), z, model, &mut out);
    Ok(out)
}

pub(crate) fn residual_into<M: EdgeMean + ?Sized>(
    alpha: &[f64],
    beta: &[f64],
    z: &MomentTargets,
    model: &M,
    out: &mut [f64],
) {
    let n = alpha.len();
    let mut exp_in = vec![0.0; n];
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            if i != j {
                let p = model.mu(alpha[i] + beta[j]);
                row += p;
                exp_in[j] += p;
            }
        }
        out[i] = z.out_deg()[i] - row;
    }
    for j in 0..n - 1 {
        out[n + j] = z.in_deg()[j] - exp_in[j];
    }
}
