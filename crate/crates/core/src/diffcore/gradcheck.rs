use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> Result<f64>, x: &Tensor, h: f64) -> Result<Tensor> {
    if h <= 0.0 {
        return Err(Error::invalid("finite difference step must be positive"));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite { op: "finite_diff_grad" });
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), grad)
}
