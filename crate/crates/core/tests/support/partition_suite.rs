//! Grid normalizer against closed-form integrals.

#![allow(dead_code)]

use vaebm::diffcore::{gaussian_log_density, Activation, Linear, MlpParams, Tensor};
use vaebm::ebm::{EnergyArch, EnergyNet, VaebmModel};
use vaebm::eval::{grid_log_integral, grid_log_partition, GridSpec};

pub fn linear(weight: Vec<f64>, rows: usize, cols: usize, bias: Vec<f64>) -> MlpParams {
    let l = Linear { weight: Tensor::matrix(rows, cols, weight).unwrap(), bias: Tensor::vector(bias) };
    MlpParams::new(vec![l], Activation::Tanh).unwrap()
}

/// Encoder that returns the prior for every input.
pub fn prior_encoder() -> MlpParams {
    linear(vec![0.0; 8], 2, 4, vec![0.0; 4])
}

/// `p(x) = N(x; 0, I)` exactly (the decoder ignores z), `E ≡ 0`.
pub fn standard_normal_model() -> VaebmModel {
    let dec = linear(vec![0.0; 8], 2, 4, vec![0.0; 4]);
    let vae = vaebm::vae::VaeModel::new(prior_encoder(), dec, 2).unwrap();
    VaebmModel { vae, energy: EnergyNet::zero(EnergyArch::plain(4, 2)) }
}

/// `(log Z, log Z at doubled resolution)`.
pub type Pair = (f64, f64);

/// Injected exact density with zero energy, through the model path. Truth 0.
pub fn zero_energy() -> Pair {
    let model = standard_normal_model();
    let grid = GridSpec { bounds: [-4.0, 4.0, -4.0, 4.0], resolution: 100 };
    let a = grid_log_partition(&model, &grid, 2, 1).unwrap().log_z;
    let b = grid_log_partition(&model, &grid.doubled(), 2, 1).unwrap().log_z;
    (a, b)
}

/// `∫ N(x; 0, I)·exp(−½‖x‖²) dx = ½`. Truth `−ln 2`.
pub fn quadratic_energy() -> Pair {
    let f = |_: usize, x: [f64; 2]| Ok(gaussian_log_density(&x, &[0.0, 0.0], &[0.0, 0.0])? - 0.5 * (x[0] * x[0] + x[1] * x[1]));
    let grid = GridSpec::default();
    (grid_log_integral(&grid, f).unwrap().0, grid_log_integral(&grid.doubled(), f).unwrap().0)
}
