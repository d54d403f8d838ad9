//! Sampler checks with known answers.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vaebm::ebm::{gaussian_init_noise, EnergyArch, EnergyNet, VaebmModel};
use vaebm::rng::derive_seed;
use vaebm::sampler::{langevin_step, run_chains, sample_vaebm, variance_adjusted_step, InitSource, LangevinConfig, NoisePair};
use vaebm::vae::{decode, VaeArch, VaeModel};

pub fn tiny_model(energy: EnergyNet) -> VaebmModel {
    let vae = VaeModel::init(VaeArch { hidden_width: 4, depth: 2, latent_dim: 2 }, 3).unwrap();
    VaebmModel { vae, energy }
}

pub struct Moments {
    /// Per noise coordinate: `(mean, variance, standard error of the mean)`.
    pub coords: Vec<(f64, f64, f64)>,
    pub draws: usize,
}

impl Moments {
    pub fn pass(&self) -> bool {
        self.coords.iter().all(|&(m, v, se)| m.abs() < 3.0 * se && (v - 1.0).abs() < 0.05)
    }
}

/// `E ≡ 0` leaves `U = ½‖ε‖²`; chains started from N(0, I) run 1000 steps at
/// η = 1e-3. 25 000 chains × 4 coordinates = 10⁵ draws.
pub fn zero_energy_moments() -> Moments {
    let model = tiny_model(EnergyNet::zero(EnergyArch::plain(4, 2)));
    let inits = gaussian_init_noise(25_000, 9, 2);
    let cfg = LangevinConfig { steps: 1000, step_size: 1e-3, seed: 5, trace_every: 0 };
    let (finals, _) = run_chains(&model, inits, &cfg).unwrap();
    let coords = (0..4)
        .map(|c| {
            let v: Vec<f64> = finals.iter().map(|f| if c < 2 { f.eps_x[c] } else { f.eps_z[c - 2] }).collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean, var, (var / n).sqrt())
        })
        .collect();
    Moments { coords, draws: finals.len() * 4 }
}

/// Largest gap between a noise-space step mapped through `x = μ + σε` and
/// the variance-scaled step on `x` for `f(x) = E(x) − log N(x; μ, σ²)`.
pub fn equivalence_gap(trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (a, b) = (0.8, 0.3);
    let de = |x: f64| a * x.cos() + 2.0 * b * x;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mu = rng.random_range(-2.0..2.0);
        let sigma: f64 = rng.random_range(0.05..2.0);
        let eta = rng.random_range(1e-4..0.1);
        let eps = rng.random_range(-3.0..3.0);
        let w = rng.random_range(-3.0..3.0);
        let x = mu + sigma * eps;

        let grad_u = sigma * de(x) + eps;
        let e = NoisePair { eps_x: vec![eps], eps_z: vec![] };
        let g = NoisePair { eps_x: vec![grad_u], eps_z: vec![] };
        let o = NoisePair { eps_x: vec![w], eps_z: vec![] };
        let via_eps = mu + sigma * langevin_step(&e, &g, eta, &o).unwrap().eps_x[0];

        let grad_f = de(x) + (x - mu) / (sigma * sigma);
        let via_x = variance_adjusted_step(&[x], &[grad_f], &[sigma], eta, &[w]).unwrap()[0];
        worst = worst.max((via_eps - via_x).abs());
    }
    worst
}

/// Zero Langevin steps against decoding the same noise by hand.
pub fn zero_steps_is_ancestral() -> bool {
    let energy = EnergyNet::init(EnergyArch::plain(4, 2), 0.1, 2).unwrap();
    let model = tiny_model(energy);
    let cfg = LangevinConfig { steps: 0, step_size: 5e-3, seed: 77, trace_every: 0 };
    let pts = sample_vaebm(&model, 300, &cfg, InitSource::Gaussian).unwrap();
    let noise = gaussian_init_noise(300, derive_seed(77, "init"), 2);
    pts.iter().zip(&noise).all(|(p, e)| {
        let d = decode(&model.vae, &e.eps_z).unwrap();
        *p == [d.mean[0] + d.log_std[0].exp() * e.eps_x[0], d.mean[1] + d.log_std[1].exp() * e.eps_x[1]]
    })
}
