//! Energy-refined variational autoencoder (VAE + energy network) on 2D toy
//! densities.
//!
//! Stage 1 fits a Gaussian VAE by maximizing the ELBO. Stage 2 freezes it and
//! fits an energy network `E(x)` so that `h(x) ∝ p_vae(x)·exp(−E(x))`, drawing
//! negatives with Langevin dynamics in the VAE's noise space. Evaluation
//! integrates the normalizer on a grid, which is exact up to quadrature in 2D.

pub mod checkpoint;
pub mod diffcore;
pub mod ebm;
pub mod error;
pub mod eval;
pub mod rng;
pub mod sampler;
pub mod toydata;
pub mod vae;

pub use error::{Error, Result};

/// A point in the 2D data space.
pub type Point = [f64; 2];
