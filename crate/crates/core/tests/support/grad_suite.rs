//! Reverse-mode gradients against central finite differences. Each check
//! reports its worst relative error over all trials.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vaebm::diffcore::{gaussian_log_density_rows, Tape, Tensor, Var};
use vaebm::ebm::{ebm_grad, EnergyArch, EnergyNet, VaebmModel};
use vaebm::sampler::{joint_potential, joint_potential_grad, NoisePair};
use vaebm::vae::{elbo_rows_on_tape, VaeArch, VaeModel};

pub const H: f64 = 1e-5;
pub const TRIALS: usize = 100;
pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const COMPOSED_TOL: f64 = 1e-5;

pub struct GradCheck {
    pub name: &'static str,
    pub worst: f64,
    pub tol: f64,
}

impl GradCheck {
    pub fn pass(&self) -> bool {
        self.worst < self.tol
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn rand_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Scalar loss `Σ w ⊙ op(inputs)` so every output element contributes.
fn loss(build: &Build, inputs: &[Tensor], w: &Tensor) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let wv = tape.constant(w.clone());
    let prod = tape.mul(out, wv).unwrap();
    let s = tape.sum(prod).unwrap();
    let grads = tape.backward(s, &vars).unwrap();
    (tape.scalar(s), grads)
}

fn max_primitive_error(build: &Build, inputs: Vec<Tensor>, rng: &mut impl Rng) -> f64 {
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
        let o = build(&mut tape, &vars);
        tape.value(o).shape().to_vec()
    };
    let w = rand_tensor(rng, &out_shape, -1.0, 1.0);
    let (_, grads) = loss(build, &inputs, &w);
    let mut worst = 0.0f64;
    for (k, g) in grads.iter().enumerate() {
        for i in 0..inputs[k].len() {
            let mut p = inputs.clone();
            p[k].data_mut()[i] += H;
            let fp = loss(build, &p, &w).0;
            p[k].data_mut()[i] -= 2.0 * H;
            let fm = loss(build, &p, &w).0;
            worst = worst.max(rel_err(g.data()[i], (fp - fm) / (2.0 * H)));
        }
    }
    worst
}

fn primitive(name: &'static str, shapes: &[&[usize]], range: (f64, f64), build: &Build) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(name.bytes().map(u64::from).sum());
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let inputs = shapes.iter().map(|s| rand_tensor(&mut rng, s, range.0, range.1)).collect();
        worst = worst.max(max_primitive_error(build, inputs, &mut rng));
    }
    GradCheck { name, worst, tol: PRIMITIVE_TOL }
}

pub fn primitive_checks() -> Vec<GradCheck> {
    let s: &[usize] = &[3, 4];
    let r = (-2.0, 2.0);
    vec![
        primitive("add", &[s, s], r, &|t, v| t.add(v[0], v[1]).unwrap()),
        primitive("sub", &[s, s], r, &|t, v| t.sub(v[0], v[1]).unwrap()),
        primitive("mul", &[s, s], r, &|t, v| t.mul(v[0], v[1]).unwrap()),
        primitive("scale", &[s], r, &|t, v| t.scale(v[0], -1.7).unwrap()),
        primitive("add_scalar", &[s], r, &|t, v| t.add_scalar(v[0], 0.3).unwrap()),
        primitive("neg", &[s], r, &|t, v| t.neg(v[0]).unwrap()),
        primitive("exp", &[s], r, &|t, v| t.exp(v[0]).unwrap()),
        primitive("tanh", &[s], r, &|t, v| t.tanh(v[0]).unwrap()),
        primitive("swish", &[s], r, &|t, v| t.swish(v[0]).unwrap()),
        primitive("square", &[s], r, &|t, v| t.square(v[0]).unwrap()),
        primitive("sin", &[s], r, &|t, v| t.sin(v[0]).unwrap()),
        primitive("clamp (inside)", &[s], (-0.9, 0.9), &|t, v| t.clamp(v[0], -1.0, 1.0).unwrap()),
        primitive("clamp (outside)", &[s], (1.5, 3.0), &|t, v| t.clamp(v[0], -1.0, 1.0).unwrap()),
        primitive("matmul", &[&[3, 4], &[4, 5]], r, &|t, v| t.matmul(v[0], v[1]).unwrap()),
        primitive("add_row", &[&[3, 4], &[4]], r, &|t, v| t.add_row(v[0], v[1]).unwrap()),
        primitive("slice_cols", &[&[3, 6]], r, &|t, v| t.slice_cols(v[0], 1, 4).unwrap()),
        primitive("sum_rows", &[s], r, &|t, v| t.sum_rows(v[0]).unwrap()),
        primitive("sum", &[s], r, &|t, v| t.sum(v[0]).unwrap()),
        primitive("mean", &[s], r, &|t, v| t.mean(v[0]).unwrap()),
        primitive("gaussian_log_density", &[&[4, 2], &[4, 2], &[4, 2]], (-1.0, 1.0), &|t, v| {
            gaussian_log_density_rows(t, v[0], v[1], v[2]).unwrap()
        }),
    ]
}

fn bump(tensors: &mut [&mut Tensor], k: usize, i: usize, d: f64) {
    tensors[k].data_mut()[i] += d;
}

fn batch_elbo(model: &VaeModel, x: &Tensor, eps: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let enc = model.encoder.bind(&mut tape, false);
    let dec = model.decoder.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let ev = tape.constant(eps.clone());
    let (e, _, _) = elbo_rows_on_tape(&mut tape, &enc, &dec, model.latent_dim, xv, ev, 0.7).unwrap();
    let s = tape.sum(e).unwrap();
    tape.scalar(s)
}

/// Parameters and noise of a batch ELBO.
pub fn elbo_check() -> GradCheck {
    let arch = VaeArch { hidden_width: 6, depth: 3, latent_dim: 3 };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let mut model = VaeModel::init(arch, trial as u64).unwrap();
        let x = rand_tensor(&mut rng, &[2, 2], -2.0, 2.0);
        let eps = rand_tensor(&mut rng, &[2, 3], -2.0, 2.0);
        let mut tape = Tape::new();
        let enc = model.encoder.bind(&mut tape, true);
        let dec = model.decoder.bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let ev = tape.var(eps.clone());
        let (e, _, _) = elbo_rows_on_tape(&mut tape, &enc, &dec, 3, xv, ev, 0.7).unwrap();
        let s = tape.sum(e).unwrap();
        let mut vars = enc.param_vars();
        vars.extend(dec.param_vars());
        vars.push(ev);
        let grads = tape.backward(s, &vars).unwrap();
        let n_params = grads.len() - 1;
        for k in 0..n_params {
            for i in 0..grads[k].len() {
                bump(&mut model.tensors_mut(), k, i, H);
                let fp = batch_elbo(&model, &x, &eps);
                bump(&mut model.tensors_mut(), k, i, -2.0 * H);
                let fm = batch_elbo(&model, &x, &eps);
                bump(&mut model.tensors_mut(), k, i, H);
                worst = worst.max(rel_err(grads[k].data()[i], (fp - fm) / (2.0 * H)));
            }
        }
        for i in 0..eps.len() {
            let mut e2 = eps.clone();
            e2.data_mut()[i] += H;
            let fp = batch_elbo(&model, &x, &e2);
            e2.data_mut()[i] -= 2.0 * H;
            let fm = batch_elbo(&model, &x, &e2);
            worst = worst.max(rel_err(grads[n_params].data()[i], (fp - fm) / (2.0 * H)));
        }
    }
    GradCheck { name: "ELBO", worst, tol: COMPOSED_TOL }
}

/// Noise-space gradient of the joint potential used by the sampler.
pub fn joint_potential_check() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let vae = VaeModel::init(VaeArch { hidden_width: 8, depth: 3, latent_dim: 4 }, trial as u64).unwrap();
        let arch = EnergyArch { hidden_width: 8, depth: 3, input_gain: 2.0, input_bias_std: 1.0 };
        let energy = EnergyNet::init(arch, 0.1, 100 + trial as u64).unwrap();
        let model = VaebmModel { vae, energy };
        let eps = NoisePair {
            eps_x: (0..2).map(|_| rng.random_range(-2.0..2.0)).collect(),
            eps_z: (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let (u, g) = joint_potential_grad(&model, &eps).unwrap();
        if (u - joint_potential(&model, &eps).unwrap()).abs() > 1e-12 {
            worst = f64::INFINITY;
        }
        let analytic: Vec<f64> = g.eps_x.iter().chain(&g.eps_z).copied().collect();
        for (i, a) in analytic.iter().enumerate() {
            let at = |d: f64| {
                let mut e = eps.clone();
                if i < 2 {
                    e.eps_x[i] += d;
                } else {
                    e.eps_z[i - 2] += d;
                }
                joint_potential(&model, &e).unwrap()
            };
            worst = worst.max(rel_err(*a, (at(H) - at(-H)) / (2.0 * H)));
        }
    }
    GradCheck { name: "joint potential", worst, tol: COMPOSED_TOL }
}

/// Energy parameters of the stage-2 loss, regularizer included.
pub fn energy_loss_check() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let arch = EnergyArch { hidden_width: 6, depth: 3, input_gain: 2.0, input_bias_std: 1.0 };
        let mut net = EnergyNet::init(arch, 0.1, trial as u64).unwrap();
        let mut pts = || -> Vec<[f64; 2]> { (0..3).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect() };
        let (d, n) = (pts(), pts());
        let g = ebm_grad(&net, &d, &n).unwrap();
        for k in 0..g.grads.len() {
            for i in 0..g.grads[k].len() {
                bump(&mut net.net.tensors_mut(), k, i, H);
                let fp = ebm_grad(&net, &d, &n).unwrap().loss;
                bump(&mut net.net.tensors_mut(), k, i, -2.0 * H);
                let fm = ebm_grad(&net, &d, &n).unwrap().loss;
                bump(&mut net.net.tensors_mut(), k, i, H);
                worst = worst.max(rel_err(g.grads[k].data()[i], (fp - fm) / (2.0 * H)));
            }
        }
    }
    GradCheck { name: "energy loss", worst, tol: COMPOSED_TOL }
}

pub fn composed_checks() -> Vec<GradCheck> {
    vec![elbo_check(), joint_potential_check(), energy_loss_check()]
}
