use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal-Gaussian log density summed over dimensions.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], log_std: &[f64]) -> Result<f64> {
    if x.len() != mean.len() || x.len() != log_std.len() {
        return Err(Error::ShapeMismatch {
            op: "gaussian_log_density",
            detail: format!("{} / {} / {}", x.len(), mean.len(), log_std.len()),
        });
    }
    Ok(x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&xi, &mi), &li)| {
            let u = (xi - mi) * (-li).exp();
            -0.5 * u * u - li - HALF_LN_2PI
        })
        .sum())
}

/// Standard-normal log density of a vector.
pub fn std_normal_log_density(x: &[f64]) -> f64 {
    x.iter().map(|&v| -0.5 * v * v - HALF_LN_2PI).sum()
}

/// Row-wise diagonal-Gaussian log density on the tape: `[rows, d]` inputs, `[rows, 1]` output.
pub fn gaussian_log_density_rows(tape: &mut Tape, x: Var, mean: Var, log_std: Var) -> Result<Var> {
    let d = tape.value(x).cols();
    let diff = tape.sub(x, mean)?;
    let neg_ls = tape.neg(log_std)?;
    let inv_std = tape.exp(neg_ls)?;
    let u = tape.mul(diff, inv_std)?;
    let u2 = tape.square(u)?;
    let quad = tape.scale(u2, -0.5)?;
    let per_dim = tape.sub(quad, log_std)?;
    let rows = tape.sum_rows(per_dim)?;
    tape.add_scalar(rows, -(d as f64) * HALF_LN_2PI)
}
