//! Langevin dynamics in the VAE's noise space `(ε_x, ε_z)`, where the
//! potential is `U(ε) = E(T(ε)) + ½‖ε‖²`, plus the variance-adjusted step in
//! `(x, z)` space that it is equivalent to for fixed scales.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diffcore::{Tape, Tensor};
use crate::ebm::{buffer_init_noise, gaussian_init_noise, EnergyNet, ReplayBuffer, VaebmModel};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, fill_normal, item_rng};
use crate::vae::{split_gaussian_on_tape, VaeModel, DATA_DIM};
use crate::Point;

/// Chains per tape; fixed so results do not depend on the thread count.
pub const CHAIN_BLOCK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct NoisePair {
    pub eps_x: Vec<f64>,
    pub eps_z: Vec<f64>,
}

impl NoisePair {
    pub fn zeros(latent_dim: usize) -> Self {
        NoisePair { eps_x: vec![0.0; DATA_DIM], eps_z: vec![0.0; latent_dim] }
    }

    pub fn is_finite(&self) -> bool {
        self.eps_x.iter().chain(&self.eps_z).all(|v| v.is_finite())
    }

    fn check(&self, latent_dim: usize) -> Result<()> {
        if self.eps_x.len() != DATA_DIM || self.eps_z.len() != latent_dim {
            return Err(Error::ShapeMismatch {
                op: "noise pair",
                detail: format!("eps_x {}, eps_z {} (latent_dim {})", self.eps_x.len(), self.eps_z.len(), latent_dim),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LangevinConfig {
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Record every n-th state (0 disables tracing).
    pub trace_every: usize,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        LangevinConfig { steps: 40, step_size: 5e-3, seed: 0, trace_every: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TracePoint {
    pub step: usize,
    pub x: Point,
    pub potential: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainTrace {
    pub points: Vec<TracePoint>,
}

/// `z = ε_z`, `x = μ(z) + σ(z) ⊙ ε_x`.
pub fn transform(vae: &VaeModel, eps: &NoisePair) -> Result<(Point, Vec<f64>)> {
    eps.check(vae.latent_dim)?;
    let x = transform_batch(vae, std::slice::from_ref(eps))?[0];
    Ok((x, eps.eps_z.clone()))
}

pub fn transform_batch(vae: &VaeModel, eps: &[NoisePair]) -> Result<Vec<Point>> {
    if eps.is_empty() {
        return Ok(Vec::new());
    }
    for e in eps {
        e.check(vae.latent_dim)?;
    }
    let z = Tensor::matrix(eps.len(), vae.latent_dim, eps.iter().flat_map(|e| e.eps_z.iter().copied()).collect())?;
    let (m, ls) = vae.decode_batch(&z)?;
    let mut out = Vec::with_capacity(eps.len());
    for (i, e) in eps.iter().enumerate() {
        let (mr, lr) = (m.row(i), ls.row(i));
        let x = [mr[0] + lr[0].exp() * e.eps_x[0], mr[1] + lr[1].exp() * e.eps_x[1]];
        if !x[0].is_finite() || !x[1].is_finite() {
            return Err(Error::NonFinite { op: "transform" });
        }
        out.push(x);
    }
    Ok(out)
}

struct BlockEval {
    potential: Vec<f64>,
    grad_x: Tensor,
    grad_z: Tensor,
    x: Tensor,
}

fn potential_block(model: &VaebmModel, ex: Tensor, ez: Tensor) -> Result<BlockEval> {
    let mut tape = Tape::new();
    let dec = model.vae.decoder.bind(&mut tape, false);
    let en = model.energy.net.bind(&mut tape, false);
    let exv = tape.var(ex);
    let ezv = tape.var(ez);
    let out = dec.forward(&mut tape, ezv)?;
    let (dm, dls) = split_gaussian_on_tape(&mut tape, out, DATA_DIM)?;
    let s = tape.exp(dls)?;
    let noise = tape.mul(s, exv)?;
    let x = tape.add(dm, noise)?;
    let e = en.forward(&mut tape, x)?;
    let qx = tape.square(exv)?;
    let qx = tape.sum_rows(qx)?;
    let qz = tape.square(ezv)?;
    let qz = tape.sum_rows(qz)?;
    let q = tape.add(qx, qz)?;
    let q = tape.scale(q, 0.5)?;
    let u = tape.add(e, q)?;
    let total = tape.sum(u)?;
    let mut g = tape.backward(total, &[exv, ezv])?;
    let grad_z = g.pop().expect("two grads");
    let grad_x = g.pop().expect("two grads");
    Ok(BlockEval { potential: tape.value(u).data().to_vec(), grad_x, grad_z, x: tape.value(x).clone() })
}

fn block_tensors(states: &[NoisePair], latent_dim: usize) -> Result<(Tensor, Tensor)> {
    let n = states.len();
    let ex = Tensor::matrix(n, DATA_DIM, states.iter().flat_map(|s| s.eps_x.iter().copied()).collect())?;
    let ez = Tensor::matrix(n, latent_dim, states.iter().flat_map(|s| s.eps_z.iter().copied()).collect())?;
    Ok((ex, ez))
}

/// `U(ε) = E(T(ε)) + ½‖ε‖²`.
pub fn joint_potential(model: &VaebmModel, eps: &NoisePair) -> Result<f64> {
    Ok(joint_potential_grad(model, eps)?.0)
}

/// `U(ε)` and `∇_ε U`.
pub fn joint_potential_grad(model: &VaebmModel, eps: &NoisePair) -> Result<(f64, NoisePair)> {
    eps.check(model.vae.latent_dim)?;
    let (ex, ez) = block_tensors(std::slice::from_ref(eps), model.vae.latent_dim)?;
    let b = potential_block(model, ex, ez)?;
    Ok((b.potential[0], NoisePair { eps_x: b.grad_x.into_data(), eps_z: b.grad_z.into_data() }))
}

#[inline]
fn ld_update(e: f64, g: f64, eta: f64, w: f64) -> f64 {
    e - 0.5 * eta * g + eta.sqrt() * w
}

/// `ε − (η/2)·∇U + √η·ω`. No accept/reject step.
pub fn langevin_step(eps: &NoisePair, grad: &NoisePair, eta: f64, omega: &NoisePair) -> Result<NoisePair> {
    let dims_ok = eps.eps_x.len() == grad.eps_x.len()
        && eps.eps_x.len() == omega.eps_x.len()
        && eps.eps_z.len() == grad.eps_z.len()
        && eps.eps_z.len() == omega.eps_z.len();
    if !dims_ok {
        return Err(Error::ShapeMismatch { op: "langevin_step", detail: "eps, grad and omega differ in shape".into() });
    }
    let step = |e: &[f64], g: &[f64], w: &[f64]| -> Vec<f64> {
        e.iter().zip(g).zip(w).map(|((&e, &g), &w)| ld_update(e, g, eta, w)).collect()
    };
    let out = NoisePair {
        eps_x: step(&eps.eps_x, &grad.eps_x, &omega.eps_x),
        eps_z: step(&eps.eps_z, &grad.eps_z, &omega.eps_z),
    };
    if !out.is_finite() {
        return Err(Error::NonFinite { op: "langevin_step" });
    }
    Ok(out)
}

fn run_block(model: &VaebmModel, mut states: Vec<NoisePair>, first: usize, config: &LangevinConfig) -> Result<(Vec<NoisePair>, Vec<ChainTrace>)> {
    let l = model.vae.latent_dim;
    let n = states.len();
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| item_rng(config.seed, "langevin", (first + i) as u64)).collect();
    let mut traces = vec![ChainTrace::default(); n];
    let tracing = config.trace_every > 0;
    let diverged = |step: usize, i: usize| Error::ChainDivergence { chain: first + i, step };
    let mut omega = vec![0.0; DATA_DIM + l];
    for step in 0..config.steps {
        let (ex, ez) = block_tensors(&states, l)?;
        let b = potential_block(model, ex, ez).map_err(|e| if e.is_divergence() { diverged(step, 0) } else { e })?;
        if tracing && step % config.trace_every == 0 {
            for (i, t) in traces.iter_mut().enumerate() {
                let xr = b.x.row(i);
                t.points.push(TracePoint { step, x: [xr[0], xr[1]], potential: b.potential[i] });
            }
        }
        for (i, s) in states.iter_mut().enumerate() {
            fill_normal(&mut rngs[i], &mut omega);
            let (wx, wz) = omega.split_at(DATA_DIM);
            for (j, e) in s.eps_x.iter_mut().enumerate() {
                *e = ld_update(*e, b.grad_x.row(i)[j], config.step_size, wx[j]);
            }
            for (j, e) in s.eps_z.iter_mut().enumerate() {
                *e = ld_update(*e, b.grad_z.row(i)[j], config.step_size, wz[j]);
            }
            if !s.is_finite() {
                return Err(diverged(step, i));
            }
        }
    }
    if tracing {
        let (ex, ez) = block_tensors(&states, l)?;
        let b = potential_block(model, ex, ez).map_err(|e| if e.is_divergence() { diverged(config.steps, 0) } else { e })?;
        for (i, t) in traces.iter_mut().enumerate() {
            let xr = b.x.row(i);
            t.points.push(TracePoint { step: config.steps, x: [xr[0], xr[1]], potential: b.potential[i] });
        }
    }
    Ok((states, traces))
}

/// Runs chain `i` of `inits` with the noise stream `i` of `config.seed`.
pub fn run_chains(model: &VaebmModel, inits: Vec<NoisePair>, config: &LangevinConfig) -> Result<(Vec<NoisePair>, Vec<ChainTrace>)> {
    if !(config.step_size > 0.0) {
        return Err(Error::invalid(format!("step size must be > 0, got {}", config.step_size)));
    }
    for e in &inits {
        e.check(model.vae.latent_dim)?;
    }
    let blocks: Vec<(usize, Vec<NoisePair>)> = inits
        .chunks(CHAIN_BLOCK)
        .enumerate()
        .map(|(b, c)| (b * CHAIN_BLOCK, c.to_vec()))
        .collect();
    let results: Vec<Result<(Vec<NoisePair>, Vec<ChainTrace>)>> =
        blocks.into_par_iter().map(|(first, states)| run_block(model, states, first, config)).collect();
    let mut finals = Vec::with_capacity(inits.len());
    let mut traces = Vec::new();
    for r in results {
        let (f, t) = r?;
        finals.extend(f);
        traces.extend(t);
    }
    Ok((finals, traces))
}

pub fn run_chain(model: &VaebmModel, init: NoisePair, config: &LangevinConfig) -> Result<(NoisePair, ChainTrace)> {
    let (mut f, mut t) = run_chains(model, vec![init], config)?;
    Ok((f.pop().expect("one chain"), t.pop().unwrap_or_default()))
}

pub enum InitSource<'a> {
    Gaussian,
    /// Persistent initialization; final `ε_z` values are pushed back in chain order.
    Buffer { buffer: &'a mut ReplayBuffer, step: usize },
}

#[derive(Clone, Debug)]
pub struct SampleRun {
    pub points: Vec<Point>,
    pub finals: Vec<NoisePair>,
    pub traces: Vec<ChainTrace>,
    pub buffer_hits: usize,
}

pub fn sample_vaebm(model: &VaebmModel, n: usize, config: &LangevinConfig, init: InitSource) -> Result<Vec<Point>> {
    Ok(sample_vaebm_run(model, n, config, init)?.points)
}

pub fn sample_vaebm_run(model: &VaebmModel, n: usize, config: &LangevinConfig, init: InitSource) -> Result<SampleRun> {
    if n == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let l = model.vae.latent_dim;
    let init_seed = derive_seed(config.seed, "init");
    let (inits, hits) = match &init {
        InitSource::Gaussian => (gaussian_init_noise(n, init_seed, l), 0),
        InitSource::Buffer { buffer, step } => buffer_init_noise(buffer, n, *step, init_seed, l),
    };
    let (finals, traces) = run_chains(model, inits, config)?;
    let points = transform_batch(&model.vae, &finals)?;
    if let InitSource::Buffer { buffer, .. } = init {
        for f in &finals {
            buffer.push(f.eps_z.clone());
        }
    }
    Ok(SampleRun { points, finals, traces, buffer_hits: hits })
}

/// `c − (σ²η/2)·∇f + √(ησ²)·ω` per component.
pub fn variance_adjusted_step(c: &[f64], grad: &[f64], sigma: &[f64], eta: f64, omega: &[f64]) -> Result<Vec<f64>> {
    if c.len() != grad.len() || c.len() != sigma.len() || c.len() != omega.len() {
        return Err(Error::ShapeMismatch { op: "variance_adjusted_step", detail: "length mismatch".into() });
    }
    let out: Vec<f64> = (0..c.len())
        .map(|i| {
            let s2 = sigma[i] * sigma[i];
            c[i] - 0.5 * s2 * eta * grad[i] + (eta * s2).sqrt() * omega[i]
        })
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "variance_adjusted_step" });
    }
    Ok(out)
}

/// One Langevin step directly on `(x, z)` for `f = E(x) − log p(x|z) − log p(z)`,
/// with each component's step scaled by its variance (`σ_x(z)` for x, 1 for z).
pub fn xz_langevin_step(
    state: (Point, &[f64]),
    vae: &VaeModel,
    energy: &EnergyNet,
    eta: f64,
    omega: &NoisePair,
) -> Result<(Point, Vec<f64>)> {
    let (x, z) = state;
    let l = vae.latent_dim;
    omega.check(l)?;
    if z.len() != l {
        return Err(Error::ShapeMismatch { op: "xz_langevin_step", detail: format!("z length {} vs {}", z.len(), l) });
    }
    let mut tape = Tape::new();
    let dec = vae.decoder.bind(&mut tape, false);
    let en = energy.net.bind(&mut tape, false);
    let xv = tape.var(Tensor::matrix(1, DATA_DIM, x.to_vec())?);
    let zv = tape.var(Tensor::matrix(1, l, z.to_vec())?);
    let out = dec.forward(&mut tape, zv)?;
    let (dm, dls) = split_gaussian_on_tape(&mut tape, out, DATA_DIM)?;
    let log_lik = crate::diffcore::gaussian_log_density_rows(&mut tape, xv, dm, dls)?;
    let e = en.forward(&mut tape, xv)?;
    let z2 = tape.square(zv)?;
    let z2 = tape.sum(z2)?;
    let prior = tape.scale(z2, 0.5)?;
    let f = tape.sub(e, log_lik)?;
    let f = tape.sum(f)?;
    let f = tape.add(f, prior)?;
    let g = tape.backward(f, &[xv, zv])?;
    let sigma_x: Vec<f64> = tape.value(dls).data().iter().map(|v| v.exp()).collect();
    let new_x = variance_adjusted_step(&x, g[0].data(), &sigma_x, eta, &omega.eps_x)?;
    let new_z = variance_adjusted_step(z, g[1].data(), &vec![1.0; l], eta, &omega.eps_z)?;
    Ok(([new_x[0], new_x[1]], new_z))
}
