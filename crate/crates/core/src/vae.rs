//! Stage-1 model: Gaussian encoder `q(z|x)`, heteroscedastic Gaussian decoder
//! `p(x|z)`, standard-normal prior. Trained on the single-sample ELBO and
//! evaluated with the importance-weighted bound.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    adam_step, gaussian_log_density, gaussian_log_density_rows, std_normal_log_density, Activation, AdamConfig,
    AdamState, BoundMlp, ClipRule, MlpParams, Tape, Tensor, Var, HALF_LN_2PI,
};
use crate::error::{Error, Result};
use crate::rng::{fill_normal, item_rng, rng_for};
use crate::toydata::log_sum_exp;
use crate::Point;

pub const DATA_DIM: usize = 2;
pub const LOG_STD_MIN: f64 = -7.0;
pub const LOG_STD_MAX: f64 = 5.0;

/// Diagonal Gaussian parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianParams {
    pub fn standard(dim: usize) -> Self {
        GaussianParams { mean: vec![0.0; dim], log_std: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Network shape shared by encoder and decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArch {
    pub hidden_width: usize,
    /// Number of affine layers per network.
    pub depth: usize,
    pub latent_dim: usize,
}

impl Default for VaeArch {
    fn default() -> Self {
        VaeArch { hidden_width: 256, depth: 4, latent_dim: 20 }
    }
}

impl VaeArch {
    fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat_n(self.hidden_width, self.depth.saturating_sub(1)));
        w.push(output);
        w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub latent_dim: usize,
}

impl VaeModel {
    pub fn new(encoder: MlpParams, decoder: MlpParams, latent_dim: usize) -> Result<Self> {
        let ok = encoder.input_dim() == DATA_DIM
            && encoder.output_dim() == 2 * latent_dim
            && decoder.input_dim() == latent_dim
            && decoder.output_dim() == 2 * DATA_DIM;
        if !ok || latent_dim == 0 {
            return Err(Error::ShapeMismatch {
                op: "vae",
                detail: format!(
                    "encoder {:?}, decoder {:?}, latent_dim {}",
                    encoder.widths(),
                    decoder.widths(),
                    latent_dim
                ),
            });
        }
        Ok(VaeModel { encoder, decoder, latent_dim })
    }

    pub fn init(arch: VaeArch, seed: u64) -> Result<Self> {
        if arch.depth == 0 || arch.hidden_width == 0 {
            return Err(Error::invalid("vae depth and width must be positive"));
        }
        let mut rng = rng_for(seed, "vae-init");
        let encoder = MlpParams::init(&arch.widths(DATA_DIM, 2 * arch.latent_dim), Activation::Tanh, 1.0, &mut rng);
        let decoder = MlpParams::init(&arch.widths(arch.latent_dim, 2 * DATA_DIM), Activation::Tanh, 1.0, &mut rng);
        VaeModel::new(encoder, decoder, arch.latent_dim)
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t
    }

    /// `[rows, 2] -> (mean, log_std)`, each `[rows, latent_dim]`.
    pub fn encode_batch(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        split_gaussian(&self.encoder.forward(x)?, self.latent_dim)
    }

    /// `[rows, latent_dim] -> (mean, log_std)`, each `[rows, 2]`.
    pub fn decode_batch(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        split_gaussian(&self.decoder.forward(z)?, DATA_DIM)
    }
}

fn split_gaussian(out: &Tensor, d: usize) -> Result<(Tensor, Tensor)> {
    let rows = out.rows();
    let mut mean = Vec::with_capacity(rows * d);
    let mut ls = Vec::with_capacity(rows * d);
    for r in 0..rows {
        let row = out.row(r);
        mean.extend_from_slice(&row[..d]);
        ls.extend(row[d..2 * d].iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)));
    }
    Ok((Tensor::matrix(rows, d, mean)?, Tensor::matrix(rows, d, ls)?))
}

/// Tape version of the output split: `(mean, clamped log_std)`.
pub fn split_gaussian_on_tape(tape: &mut Tape, out: Var, d: usize) -> Result<(Var, Var)> {
    let mean = tape.slice_cols(out, 0, d)?;
    let raw = tape.slice_cols(out, d, 2 * d)?;
    let ls = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)?;
    Ok((mean, ls))
}

fn point_tensor(x: Point) -> Tensor {
    Tensor::vector(x.to_vec())
}

pub fn encode(model: &VaeModel, x: Point) -> Result<GaussianParams> {
    let (m, l) = model.encode_batch(&point_tensor(x))?;
    Ok(GaussianParams { mean: m.into_data(), log_std: l.into_data() })
}

pub fn decode(model: &VaeModel, z: &[f64]) -> Result<GaussianParams> {
    if z.len() != model.latent_dim {
        return Err(Error::ShapeMismatch {
            op: "decode",
            detail: format!("latent length {} vs {}", z.len(), model.latent_dim),
        });
    }
    let (m, l) = model.decode_batch(&Tensor::vector(z.to_vec()))?;
    Ok(GaussianParams { mean: m.into_data(), log_std: l.into_data() })
}

/// `mean + exp(log_std) ⊙ eps`.
pub fn reparam_sample(params: &GaussianParams, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != params.dim() || params.log_std.len() != params.dim() {
        return Err(Error::ShapeMismatch {
            op: "reparam_sample",
            detail: format!("eps {} vs params {}", eps.len(), params.dim()),
        });
    }
    Ok(params.mean.iter().zip(&params.log_std).zip(eps).map(|((m, l), e)| m + l.exp() * e).collect())
}

/// Closed-form `KL(q ‖ p)` for diagonal Gaussians, summed over dimensions.
pub fn kl_diag_gaussian(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::ShapeMismatch { op: "kl_diag_gaussian", detail: format!("{} vs {}", q.dim(), p.dim()) });
    }
    let mut kl = 0.0;
    for i in 0..q.dim() {
        let (mq, lq, mp, lp) = (q.mean[i], q.log_std[i], p.mean[i], p.log_std[i]);
        let ratio = (2.0 * (lq - lp)).exp();
        let d = (mq - mp) * (-lp).exp();
        kl += 0.5 * (ratio + d * d - 1.0) - (lq - lp);
    }
    Ok(kl)
}

/// Single-sample ELBO with the analytic KL term.
pub fn elbo(model: &VaeModel, x: Point, eps: &[f64]) -> Result<f64> {
    let q = encode(model, x)?;
    let z = reparam_sample(&q, eps)?;
    let dec = decode(model, &z)?;
    let rec = gaussian_log_density(&x, &dec.mean, &dec.log_std)?;
    let kl = kl_diag_gaussian(&q, &GaussianParams::standard(model.latent_dim))?;
    let v = rec - kl;
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "elbo" });
    }
    Ok(v)
}

/// Single-sample ELBO with the sampled KL, `log p(z) + log p(x|z) − log q(z|x)`.
/// This is the importance weight of the bound below; its expectation matches [`elbo`].
pub fn elbo_sampled(model: &VaeModel, x: Point, eps: &[f64]) -> Result<f64> {
    let q = encode(model, x)?;
    let z = reparam_sample(&q, eps)?;
    let dec = decode(model, &z)?;
    Ok(log_weight(x, &z, eps, &q.log_std, &dec.mean, &dec.log_std))
}

fn log_weight(x: Point, z: &[f64], eps: &[f64], q_log_std: &[f64], dec_mean: &[f64], dec_ls: &[f64]) -> f64 {
    let mut log_q = 0.0;
    for (e, l) in eps.iter().zip(q_log_std) {
        log_q += -0.5 * e * e - l - HALF_LN_2PI;
    }
    let log_prior = std_normal_log_density(z);
    let mut log_lik = 0.0;
    for d in 0..DATA_DIM {
        let u = (x[d] - dec_mean[d]) * (-dec_ls[d]).exp();
        log_lik += -0.5 * u * u - dec_ls[d] - HALF_LN_2PI;
    }
    log_prior + log_lik - log_q
}

const IWAE_CHUNK: usize = 1000;

/// Importance-weighted bound with `k` posterior samples drawn from
/// `item_rng(seed, "iwae", stream)`, `k × latent_dim` normals in row order.
pub fn iwae_bound_stream(model: &VaeModel, x: Point, k: usize, seed: u64, stream: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("iwae needs k >= 1"));
    }
    let l = model.latent_dim;
    let (qm, qls) = model.encode_batch(&point_tensor(x))?;
    let (qm, qls) = (qm.data(), qls.data());
    let mut rng = item_rng(seed, "iwae", stream);
    let mut log_w = Vec::with_capacity(k);
    let mut eps = Vec::new();
    let mut done = 0;
    while done < k {
        let c = IWAE_CHUNK.min(k - done);
        eps.resize(c * l, 0.0);
        fill_normal(&mut rng, &mut eps);
        let mut z = Vec::with_capacity(c * l);
        for row in eps.chunks(l) {
            z.extend(row.iter().enumerate().map(|(j, e)| qm[j] + qls[j].exp() * e));
        }
        let zt = Tensor::matrix(c, l, z)?;
        let (dm, dls) = model.decode_batch(&zt)?;
        for r in 0..c {
            log_w.push(log_weight(x, zt.row(r), &eps[r * l..(r + 1) * l], qls, dm.row(r), dls.row(r)));
        }
        done += c;
    }
    let lse = log_sum_exp(log_w.iter().copied());
    if lse == f64::NEG_INFINITY || lse.is_nan() {
        return Err(Error::DegenerateWeights);
    }
    Ok(lse - (k as f64).ln())
}

pub fn iwae_bound(model: &VaeModel, x: Point, k: usize, seed: u64) -> Result<f64> {
    iwae_bound_stream(model, x, k, seed, 0)
}

/// Bound for each point; point `i` uses stream `i`, so results do not depend on threading.
pub fn iwae_bounds(model: &VaeModel, xs: &[Point], k: usize, seed: u64) -> Result<Vec<f64>> {
    xs.par_iter()
        .enumerate()
        .map(|(i, &x)| iwae_bound_stream(model, x, k, seed, i as u64))
        .collect()
}

/// Row-wise ELBO on the tape with KL weight `beta`; returns `(elbo_beta, rec, kl)`, each `[rows, 1]`.
pub fn elbo_rows_on_tape(
    tape: &mut Tape,
    enc: &BoundMlp,
    dec: &BoundMlp,
    latent_dim: usize,
    x: Var,
    eps: Var,
    beta: f64,
) -> Result<(Var, Var, Var)> {
    let h = enc.forward(tape, x)?;
    let (qm, qls) = split_gaussian_on_tape(tape, h, latent_dim)?;
    let qs = tape.exp(qls)?;
    let noise = tape.mul(qs, eps)?;
    let z = tape.add(qm, noise)?;
    let out = dec.forward(tape, z)?;
    let (dm, dls) = split_gaussian_on_tape(tape, out, DATA_DIM)?;
    let rec = gaussian_log_density_rows(tape, x, dm, dls)?;
    // KL(q ‖ N(0, I)) = Σ ½(μ² + σ² − 1) − log σ
    let m2 = tape.square(qm)?;
    let two_ls = tape.scale(qls, 2.0)?;
    let s2 = tape.exp(two_ls)?;
    let t = tape.add(m2, s2)?;
    let t = tape.scale(t, 0.5)?;
    let t = tape.sub(t, qls)?;
    let t = tape.add_scalar(t, -0.5)?;
    let kl = tape.sum_rows(t)?;
    let wkl = tape.scale(kl, beta)?;
    let e = tape.sub(rec, wkl)?;
    Ok((e, rec, kl))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeTrainConfig {
    pub arch: VaeArch,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Fraction of all steps over which the KL weight ramps linearly from 0 to 1.
    pub kl_anneal_frac: f64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            arch: VaeArch::default(),
            epochs: 20,
            batch_size: 256,
            lr: 1e-3,
            weight_decay: 0.0,
            kl_anneal_frac: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeLogRow {
    pub epoch: usize,
    pub step: usize,
    pub kl_weight: f64,
    pub elbo: f64,
    pub kl: f64,
}

pub struct VaeTrainOutcome {
    pub model: VaeModel,
    pub log: Vec<VaeLogRow>,
}

pub fn kl_weight(step: usize, total_steps: usize, anneal_frac: f64) -> f64 {
    let ramp = anneal_frac * total_steps as f64;
    if ramp <= 0.0 {
        1.0
    } else {
        (step as f64 / ramp).min(1.0)
    }
}

/// One gradient step on a batch; returns `(mean elbo, mean kl)` before the update.
pub fn vae_step(
    model: &mut VaeModel,
    adam: &mut AdamState,
    batch: &[Point],
    eps: Vec<f64>,
    beta: f64,
) -> Result<(f64, f64)> {
    let n = batch.len();
    let mut tape = Tape::new();
    let enc = model.encoder.bind(&mut tape, true);
    let dec = model.decoder.bind(&mut tape, true);
    let x = tape.constant(Tensor::matrix(n, DATA_DIM, batch.iter().flatten().copied().collect())?);
    let e = tape.constant(Tensor::matrix(n, model.latent_dim, eps)?);
    let (elbo_b, rec, kl) = elbo_rows_on_tape(&mut tape, &enc, &dec, model.latent_dim, x, e, beta)?;
    let mean = tape.mean(elbo_b)?;
    let loss = tape.neg(mean)?;
    let mut vars = enc.param_vars();
    vars.extend(dec.param_vars());
    let grads = tape.backward(loss, &vars)?;
    let mean_rec = tape.value(rec).data().iter().sum::<f64>() / n as f64;
    let mean_kl = tape.value(kl).data().iter().sum::<f64>() / n as f64;
    adam_step(adam, &mut model.tensors_mut(), &grads, ClipRule::None)?;
    Ok((mean_rec - mean_kl, mean_kl))
}

/// Stage-1 training: Adam on the negative single-sample ELBO with KL warm-up.
pub fn train_vae(dataset: &[Point], config: &VaeTrainConfig, seed: u64) -> Result<VaeTrainOutcome> {
    train_vae_from(VaeModel::init(config.arch, seed)?, dataset, config, seed)
}

pub fn train_vae_from(mut model: VaeModel, dataset: &[Point], config: &VaeTrainConfig, seed: u64) -> Result<VaeTrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let adam_cfg = AdamConfig { lr: config.lr, weight_decay: config.weight_decay, ..Default::default() };
    let mut adam = AdamState::new(adam_cfg, model.tensors());
    let mut rng = rng_for(seed, "vae-train");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let steps_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total = steps_per_epoch * config.epochs;
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0;
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut sum_elbo, mut sum_kl, mut count) = (0.0, 0.0, 0usize);
        for idx in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| dataset[i]));
            let mut eps = vec![0.0; batch.len() * model.latent_dim];
            fill_normal(&mut rng, &mut eps);
            let beta = kl_weight(step, total, config.kl_anneal_frac);
            let (e, kl) = vae_step(&mut model, &mut adam, &batch, eps, beta).map_err(|err| match err {
                Error::NonFinite { op } => Error::TrainingDivergence { step, reason: format!("non-finite {}", op) },
                other => other,
            })?;
            if !e.is_finite() {
                return Err(Error::TrainingDivergence { step, reason: "non-finite ELBO".into() });
            }
            sum_elbo += e * batch.len() as f64;
            sum_kl += kl * batch.len() as f64;
            count += batch.len();
            step += 1;
        }
        log.push(VaeLogRow {
            epoch,
            step,
            kl_weight: kl_weight(step, total, config.kl_anneal_frac),
            elbo: sum_elbo / count as f64,
            kl: sum_kl / count as f64,
        });
    }
    Ok(VaeTrainOutcome { model, log })
}

/// Mean ELBO over `points` with a fixed noise stream, for before/after comparisons.
pub fn mean_elbo(model: &VaeModel, points: &[Point], seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, "mean-elbo");
    let mut total = 0.0;
    let mut eps = vec![0.0; model.latent_dim];
    for &x in points {
        fill_normal(&mut rng, &mut eps);
        total += elbo(model, x, &eps)?;
    }
    Ok(total / points.len() as f64)
}
