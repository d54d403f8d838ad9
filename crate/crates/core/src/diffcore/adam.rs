//! Adam with decoupled weight decay and optional second-moment clipping.
//!
//! ```text
//! p ← p − lr·wd·p
//! m ← β₁m + (1−β₁)g,  v ← β₂v + (1−β₂)g²
//! p ← p − lr · m̂ / (√v̂ + ε)
//! ```
//!
//! With clipping enabled, each gradient element is first clamped to
//! `±n_std·√v` using the second moment accumulated so far (skipped on the
//! very first step, where `v` is still zero).

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClipRule {
    None,
    SecondMoment { n_std: f64 },
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        AdamState { config, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    #[cfg(test)]
    pub(crate) fn second_moments_mut(&mut self) -> &mut [Tensor] {
        &mut self.v
    }
}

/// Applies `rule` to a copy of `grads` using the current second moments.
pub fn clip_gradients(state: &AdamState, grads: &[Tensor], rule: ClipRule) -> Vec<Tensor> {
    match rule {
        ClipRule::SecondMoment { n_std } if state.step > 0 => grads
            .iter()
            .zip(&state.v)
            .map(|(g, v)| {
                g.zip_map(v, |gi, vi| {
                    let bound = n_std * vi.sqrt();
                    gi.clamp(-bound, bound)
                })
            })
            .collect(),
        _ => grads.to_vec(),
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut [&mut Tensor], grads: &[Tensor], rule: ClipRule) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            detail: format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), state.m.len()),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                detail: format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
            });
        }
    }
    let grads = clip_gradients(state, grads, rule);
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "adam_step" });
    }

    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps, weight_decay } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(&grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let pd = p.data_mut();
        for (i, &gi) in g.data().iter().enumerate() {
            let mi = &mut m.data_mut()[i];
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            let mhat = *mi / bc1;
            let vi = &mut v.data_mut()[i];
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let vhat = *vi / bc2;
            if weight_decay != 0.0 {
                pd[i] -= lr * weight_decay * pd[i];
            }
            pd[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
