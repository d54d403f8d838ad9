//! Stage-2 model: energy network `E(x)` on top of a frozen VAE, its
//! contrastive gradient, the persistent replay buffer and the trainer.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{adam_step, Activation, AdamConfig, AdamState, ClipRule, MlpParams, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, fill_normal, item_rng, rng_for};
use crate::sampler::{run_chains, transform_batch, LangevinConfig, NoisePair};
use crate::vae::{iwae_bound_stream, VaeModel};
use crate::Point;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyArch {
    pub hidden_width: usize,
    /// Number of affine layers.
    pub depth: usize,
    /// Multiplier on the first layer's initial weights.
    pub input_gain: f64,
    /// Std of the first layer's initial biases.
    pub input_bias_std: f64,
}

impl Default for EnergyArch {
    fn default() -> Self {
        EnergyArch { hidden_width: 256, depth: 4, input_gain: 8.0, input_bias_std: 4.0 }
    }
}

impl EnergyArch {
    pub fn plain(hidden_width: usize, depth: usize) -> Self {
        EnergyArch { hidden_width, depth, input_gain: 1.0, input_bias_std: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyNet {
    pub net: MlpParams,
    pub l2_coeff: f64,
}

impl EnergyNet {
    pub fn new(net: MlpParams, l2_coeff: f64) -> Result<Self> {
        if net.input_dim() != 2 || net.output_dim() != 1 {
            return Err(Error::ShapeMismatch { op: "energy", detail: format!("widths {:?}, need 2 -> ... -> 1", net.widths()) });
        }
        if !(l2_coeff >= 0.0) {
            return Err(Error::invalid(format!("l2_coeff must be >= 0, got {}", l2_coeff)));
        }
        Ok(EnergyNet { net, l2_coeff })
    }

    /// Swish MLP with a small output layer so the initial energy is nearly flat.
    /// The first layer starts at `input_gain` times the usual scale, with
    /// random biases, so its units begin with fine spatial resolution.
    pub fn init(arch: EnergyArch, l2_coeff: f64, seed: u64) -> Result<Self> {
        if arch.depth == 0 || arch.hidden_width == 0 {
            return Err(Error::invalid("energy depth and width must be positive"));
        }
        if !(arch.input_gain > 0.0) || !(arch.input_bias_std >= 0.0) {
            return Err(Error::invalid("input_gain must be > 0 and input_bias_std >= 0"));
        }
        let mut widths = vec![2];
        widths.extend(std::iter::repeat_n(arch.hidden_width, arch.depth - 1));
        widths.push(1);
        let mut rng = rng_for(seed, "energy-init");
        let mut net = MlpParams::init(&widths, Activation::Swish, 0.1, &mut rng);
        let first = &mut net.layers[0];
        first.weight.data_mut().iter_mut().for_each(|w| *w *= arch.input_gain);
        fill_normal(&mut rng, first.bias.data_mut());
        first.bias.data_mut().iter_mut().for_each(|b| *b *= arch.input_bias_std);
        EnergyNet::new(net, l2_coeff)
    }

    /// Zero energy everywhere.
    pub fn zero(arch: EnergyArch) -> Self {
        let mut widths = vec![2];
        widths.extend(std::iter::repeat_n(arch.hidden_width, arch.depth.max(1) - 1));
        widths.push(1);
        EnergyNet { net: MlpParams::zeros(&widths, Activation::Swish), l2_coeff: 0.0 }
    }

    /// Adds `c` to the output bias, shifting every energy by exactly `c`.
    pub fn shifted(&self, c: f64) -> EnergyNet {
        let mut e = self.clone();
        let b = &mut e.net.layers.last_mut().expect("nonempty").bias;
        b.data_mut()[0] += c;
        e
    }
}

pub fn energy(model: &EnergyNet, x: Point) -> Result<f64> {
    Ok(model.net.forward(&Tensor::vector(x.to_vec()))?.data()[0])
}

pub fn energies(model: &EnergyNet, xs: &[Point]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let t = points_tensor(xs)?;
    Ok(model.net.forward(&t)?.into_data())
}

/// `∇_x E(x)`.
pub fn energy_grad_x(model: &EnergyNet, x: Point) -> Result<[f64; 2]> {
    let mut tape = Tape::new();
    let xv = tape.var(Tensor::matrix(1, 2, x.to_vec())?);
    let e = model.net.bind(&mut tape, false).forward(&mut tape, xv)?;
    let s = tape.sum(e)?;
    let g = tape.backward(s, &[xv])?;
    Ok([g[0].data()[0], g[0].data()[1]])
}

pub(crate) fn points_tensor(xs: &[Point]) -> Result<Tensor> {
    Tensor::matrix(xs.len(), 2, xs.iter().flatten().copied().collect())
}

/// Frozen VAE plus energy; `h(x) ∝ p_vae(x)·exp(−E(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct VaebmModel {
    pub vae: VaeModel,
    pub energy: EnergyNet,
}

/// `log p_vae(x) − E(x)` with the IWAE estimate of `log p_vae`; excludes `log Z`.
pub fn log_h_unnorm(model: &VaebmModel, x: Point, k: usize, seed: u64) -> Result<f64> {
    log_h_unnorm_stream(model, x, k, seed, 0)
}

pub fn log_h_unnorm_stream(model: &VaebmModel, x: Point, k: usize, seed: u64, stream: u64) -> Result<f64> {
    Ok(iwae_bound_stream(&model.vae, x, k, seed, stream)? - energy(&model.energy, x)?)
}

/// Energies of `x` on `tape` through a bound network, as `[rows, 1]`.
fn energy_rows(tape: &mut Tape, bound: &crate::diffcore::BoundMlp, xs: &[Point]) -> Result<Var> {
    let x = tape.constant(points_tensor(xs)?);
    bound.forward(tape, x)
}

#[derive(Clone, Debug)]
pub struct EbmGrad {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub e_data_mean: f64,
    pub e_neg_mean: f64,
}

/// Gradient of `mean E(data) − mean E(neg) + l2·(mean E(data)² + mean E(neg)²)`
/// with respect to the energy parameters.
pub fn ebm_grad(model: &EnergyNet, data: &[Point], negatives: &[Point]) -> Result<EbmGrad> {
    if data.is_empty() || negatives.is_empty() {
        return Err(Error::invalid("ebm_grad needs nonempty data and negative batches"));
    }
    let mut tape = Tape::new();
    let bound = model.net.bind(&mut tape, true);
    let ed = energy_rows(&mut tape, &bound, data)?;
    let en = energy_rows(&mut tape, &bound, negatives)?;
    let md = tape.mean(ed)?;
    let mn = tape.mean(en)?;
    let mut loss = tape.sub(md, mn)?;
    if model.l2_coeff != 0.0 {
        let sd = tape.square(ed)?;
        let sd = tape.mean(sd)?;
        let sn = tape.square(en)?;
        let sn = tape.mean(sn)?;
        let reg = tape.add(sd, sn)?;
        let reg = tape.scale(reg, model.l2_coeff)?;
        loss = tape.add(loss, reg)?;
    }
    let grads = tape.backward(loss, &bound.param_vars())?;
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "ebm_grad" });
    }
    Ok(EbmGrad { loss: tape.scalar(loss), grads, e_data_mean: tape.scalar(md), e_neg_mean: tape.scalar(mn) })
}

/// Ring buffer of latent noise `ε_z` from past chains.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<Vec<f64>>,
    next: usize,
    pub end_prob: f64,
    pub ramp_steps: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, end_prob: f64, ramp_steps: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("buffer capacity must be >= 1"));
        }
        if !(0.0..=1.0).contains(&end_prob) {
            return Err(Error::invalid(format!("buffer probability must be in [0, 1], got {}", end_prob)));
        }
        Ok(ReplayBuffer { capacity, entries: Vec::new(), next: 0, end_prob, ramp_steps })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// Draw probability at a training step: linear from 0 to `end_prob`.
    pub fn prob(&self, step: usize) -> f64 {
        if self.ramp_steps == 0 {
            self.end_prob
        } else {
            self.end_prob * (step as f64 / self.ramp_steps as f64).min(1.0)
        }
    }

    /// Overwrites the oldest entry once full.
    pub fn push(&mut self, eps_z: Vec<f64>) {
        if self.entries.len() < self.capacity {
            self.entries.push(eps_z);
        } else {
            self.entries[self.next] = eps_z;
        }
        self.next = (self.next + 1) % self.capacity;
    }
}

/// Initial chain states: each `ε_z` comes from the buffer with probability
/// `p(step)`, otherwise fresh; `ε_x` is always fresh. Returns the states and
/// the number of buffer hits.
pub fn buffer_init_noise(
    buffer: &ReplayBuffer,
    batch_size: usize,
    step: usize,
    seed: u64,
    latent_dim: usize,
) -> (Vec<NoisePair>, usize) {
    let p = buffer.prob(step);
    let mut hits = 0;
    let inits = (0..batch_size)
        .map(|i| {
            let mut rng = item_rng(seed, "buffer-init", i as u64);
            let mut eps_x = vec![0.0; 2];
            fill_normal(&mut rng, &mut eps_x);
            let u: f64 = rng.random();
            let eps_z = if !buffer.is_empty() && u < p {
                hits += 1;
                buffer.entries[rng.random_range(0..buffer.len())].clone()
            } else {
                let mut z = vec![0.0; latent_dim];
                fill_normal(&mut rng, &mut z);
                z
            };
            NoisePair { eps_x, eps_z }
        })
        .collect();
    (inits, hits)
}

/// Fresh `N(0, I)` chain states, chain `i` from stream `i`.
pub fn gaussian_init_noise(n: usize, seed: u64, latent_dim: usize) -> Vec<NoisePair> {
    (0..n)
        .map(|i| {
            let mut rng = item_rng(seed, "gaussian-init", i as u64);
            let mut eps_x = vec![0.0; 2];
            fill_normal(&mut rng, &mut eps_x);
            let mut eps_z = vec![0.0; latent_dim];
            fill_normal(&mut rng, &mut eps_z);
            NoisePair { eps_x, eps_z }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EbmTrainConfig {
    pub arch: EnergyArch,
    pub lr: f64,
    /// Cosine decay from `lr` down to `lr · lr_final_frac` at the last step.
    pub lr_final_frac: f64,
    pub beta1: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub l2_coeff: f64,
    pub persistent: bool,
    pub buffer_capacity: usize,
    pub buffer_end_prob: f64,
    pub buffer_ramp_steps: usize,
    pub clip: bool,
    /// Early stop once `|E_neg − E_data|` stays above this for `patience` steps.
    pub gap_threshold: f64,
    pub patience: usize,
}

impl Default for EbmTrainConfig {
    fn default() -> Self {
        EbmTrainConfig {
            arch: EnergyArch::default(),
            lr: 1e-3,
            lr_final_frac: 1.0,
            beta1: 0.9,
            weight_decay: 3e-5,
            iterations: 4000,
            batch_size: 256,
            l2_coeff: 0.1,
            persistent: true,
            buffer_capacity: 10_000,
            buffer_end_prob: 0.6,
            buffer_ramp_steps: 1000,
            clip: true,
            gap_threshold: 10.0,
            patience: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EbmLogRow {
    pub step: usize,
    pub loss: f64,
    pub e_data_mean: f64,
    pub e_neg_mean: f64,
    pub buffer_p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainStatus {
    Completed,
    EarlyStopped { step: usize },
    Diverged { step: usize, reason: String },
}

pub struct EbmTrainOutcome {
    /// Last parameters that produced a finite update.
    pub energy: EnergyNet,
    pub log: Vec<EbmLogRow>,
    pub status: TrainStatus,
    pub buffer: Option<ReplayBuffer>,
}

pub fn cosine_lr(lr: f64, final_frac: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return lr;
    }
    let t = step as f64 / (total - 1) as f64;
    lr * (final_frac + (1.0 - final_frac) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// Stage-2 training with the VAE frozen. Divergence is reported through
/// [`TrainStatus::Diverged`] together with the last good parameters.
pub fn train_ebm(
    vae: &VaeModel,
    init: EnergyNet,
    dataset: &[Point],
    sampler: &LangevinConfig,
    config: &EbmTrainConfig,
    seed: u64,
) -> Result<EbmTrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let mut model = VaebmModel { vae: vae.clone(), energy: EnergyNet { l2_coeff: config.l2_coeff, ..init } };
    let adam_cfg = AdamConfig { lr: config.lr, beta1: config.beta1, weight_decay: config.weight_decay, ..Default::default() };
    let mut adam = AdamState::new(adam_cfg, model.energy.net.tensors());
    let clip = if config.clip { ClipRule::SecondMoment { n_std: 3.0 } } else { ClipRule::None };
    let mut buffer = if config.persistent {
        Some(ReplayBuffer::new(config.buffer_capacity, config.buffer_end_prob, config.buffer_ramp_steps)?)
    } else {
        None
    };
    let mut rng = rng_for(seed, "ebm-data");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut log = Vec::with_capacity(config.iterations);
    let mut over_gap = 0;
    let latent = vae.latent_dim;
    let mut status = TrainStatus::Completed;

    for step in 0..config.iterations {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(dataset[order[cursor]]);
            cursor += 1;
        }
        let init_seed = derive_seed(seed, &format!("ebm-init-{}", step));
        let (inits, buffer_p) = match &buffer {
            Some(b) => (buffer_init_noise(b, config.batch_size, step, init_seed, latent).0, b.prob(step)),
            None => (gaussian_init_noise(config.batch_size, init_seed, latent), 0.0),
        };
        let ld = LangevinConfig { seed: derive_seed(seed, &format!("ebm-ld-{}", step)), trace_every: 0, ..*sampler };
        let finals = match run_chains(&model, inits, &ld) {
            Ok((f, _)) => f,
            Err(e) if e.is_divergence() => {
                status = TrainStatus::Diverged { step, reason: e.to_string() };
                break;
            }
            Err(e) => return Err(e),
        };
        let negatives = match transform_batch(vae, &finals) {
            Ok(n) => n,
            Err(e) if e.is_divergence() => {
                status = TrainStatus::Diverged { step, reason: e.to_string() };
                break;
            }
            Err(e) => return Err(e),
        };
        if let Some(b) = buffer.as_mut() {
            for f in finals {
                b.push(f.eps_z);
            }
        }
        let g = match ebm_grad(&model.energy, &batch, &negatives) {
            Ok(g) => g,
            Err(e) if e.is_divergence() => {
                status = TrainStatus::Diverged { step, reason: e.to_string() };
                break;
            }
            Err(e) => return Err(e),
        };
        let gap = g.e_neg_mean - g.e_data_mean;
        if !gap.is_finite() || !g.loss.is_finite() {
            status = TrainStatus::Diverged { step, reason: "non-finite energy gap".into() };
            break;
        }
        let mut trial = model.energy.clone();
        let mut trial_adam = adam.clone();
        trial_adam.config.lr = cosine_lr(config.lr, config.lr_final_frac, step, config.iterations);
        if let Err(e) = adam_step(&mut trial_adam, &mut trial.net.tensors_mut(), &g.grads, clip) {
            if e.is_divergence() {
                status = TrainStatus::Diverged { step, reason: e.to_string() };
                break;
            }
            return Err(e);
        }
        if trial.net.tensors().iter().any(|t| !t.is_finite()) {
            status = TrainStatus::Diverged { step, reason: "non-finite parameters".into() };
            break;
        }
        model.energy = trial;
        adam = trial_adam;
        log.push(EbmLogRow { step, loss: g.loss, e_data_mean: g.e_data_mean, e_neg_mean: g.e_neg_mean, buffer_p });
        over_gap = if gap.abs() > config.gap_threshold { over_gap + 1 } else { 0 };
        if over_gap >= config.patience {
            status = TrainStatus::EarlyStopped { step };
            break;
        }
    }
    Ok(EbmTrainOutcome { energy: model.energy, log, status, buffer })
}
