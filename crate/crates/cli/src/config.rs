//! Run configuration. Every field has a default; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vaebm::ebm::{EbmTrainConfig, EnergyArch};
use vaebm::eval::GridSpec;
use vaebm::sampler::LangevinConfig;
use vaebm::toydata::DEFAULT_COMPONENT_STD;
use vaebm::vae::{VaeArch, VaeTrainConfig};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub vae: VaeConfig,
    pub ebm: EbmConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            out: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            vae: VaeConfig::default(),
            ebm: EbmConfig::default(),
            sampler: SamplerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_ood: usize,
    pub component_std: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { n_train: 100_000, n_test: 100_000, n_ood: 10_000, component_std: DEFAULT_COMPONENT_STD }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub hidden_width: usize,
    pub depth: usize,
    pub latent_dim: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub kl_anneal_frac: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            hidden_width: 64,
            depth: 4,
            latent_dim: 20,
            lr: 1e-3,
            weight_decay: 0.0,
            epochs: 10,
            batch_size: 256,
            kl_anneal_frac: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EbmConfig {
    pub hidden_width: usize,
    pub depth: usize,
    pub input_gain: f64,
    pub input_bias_std: f64,
    pub lr: f64,
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
    pub gap_threshold: f64,
    pub patience: usize,
}

impl Default for EbmConfig {
    fn default() -> Self {
        EbmConfig {
            hidden_width: 64,
            depth: 4,
            input_gain: 8.0,
            input_bias_std: 4.0,
            lr: 1e-3,
            lr_final_frac: 1.0,
            beta1: 0.9,
            weight_decay: 3e-5,
            iterations: 3000,
            batch_size: 128,
            l2_coeff: 0.1,
            persistent: true,
            buffer_capacity: 10_000,
            buffer_end_prob: 0.6,
            buffer_ramp_steps: 500,
            clip: true,
            gap_threshold: 10.0,
            patience: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub step_size: f64,
    pub eval_steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { steps: 40, step_size: 5e-3, eval_steps: 60 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub grid_bounds: [f64; 4],
    pub grid_resolution: usize,
    /// Posterior samples for the reported test likelihoods.
    pub iwae_k: usize,
    /// Posterior samples per grid cell.
    pub grid_iwae_k: usize,
    /// Posterior samples for OOD and histogram scores.
    pub score_k: usize,
    /// Test points used for the likelihood estimates (the analytic value uses all).
    pub n_test_ll: usize,
    pub n_samples: usize,
    pub n_score: usize,
    pub mode_radius_std: f64,
    pub hist_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            grid_bounds: [-4.0, 4.0, -4.0, 4.0],
            grid_resolution: 200,
            iwae_k: 10_000,
            grid_iwae_k: 1000,
            score_k: 100,
            n_test_ll: 2000,
            n_samples: 10_000,
            n_score: 10_000,
            mode_radius_std: 3.0,
            hist_bins: 50,
        }
    }
}

fn bad(key: &str, value: impl std::fmt::Display, why: &str) -> CliError {
    CliError::Config(format!("{} = {}: {}", key, value, why))
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, v, "must be a finite number > 0"))
    }
}

fn non_negative(key: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, v, "must be a finite number >= 0"))
    }
}

fn at_least(key: &str, v: usize, min: usize) -> Result<(), CliError> {
    if v >= min {
        Ok(())
    } else {
        Err(bad(key, v, &format!("must be >= {}", min)))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {}", path.display(), e)))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {}", path.display(), m)),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        at_least("data.n_train", d.n_train, 1)?;
        at_least("data.n_test", d.n_test, 1)?;
        at_least("data.n_ood", d.n_ood, 1)?;
        positive("data.component_std", d.component_std)?;
        if d.component_std >= 1.0 / 6.0 {
            return Err(bad("data.component_std", d.component_std, "must be < 1/6 so 3σ mode radii do not overlap"));
        }
        let v = &self.vae;
        at_least("vae.hidden_width", v.hidden_width, 1)?;
        at_least("vae.depth", v.depth, 1)?;
        at_least("vae.latent_dim", v.latent_dim, 1)?;
        non_negative("vae.lr", v.lr)?;
        non_negative("vae.weight_decay", v.weight_decay)?;
        at_least("vae.batch_size", v.batch_size, 1)?;
        if !(0.0..=1.0).contains(&v.kl_anneal_frac) {
            return Err(bad("vae.kl_anneal_frac", v.kl_anneal_frac, "must be in [0, 1]"));
        }
        let e = &self.ebm;
        at_least("ebm.hidden_width", e.hidden_width, 1)?;
        at_least("ebm.depth", e.depth, 1)?;
        positive("ebm.input_gain", e.input_gain)?;
        non_negative("ebm.input_bias_std", e.input_bias_std)?;
        non_negative("ebm.lr", e.lr)?;
        if !(0.0..=1.0).contains(&e.lr_final_frac) {
            return Err(bad("ebm.lr_final_frac", e.lr_final_frac, "must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&e.beta1) {
            return Err(bad("ebm.beta1", e.beta1, "must be in [0, 1)"));
        }
        non_negative("ebm.weight_decay", e.weight_decay)?;
        at_least("ebm.batch_size", e.batch_size, 1)?;
        non_negative("ebm.l2_coeff", e.l2_coeff)?;
        at_least("ebm.buffer_capacity", e.buffer_capacity, 1)?;
        if !(0.0..=1.0).contains(&e.buffer_end_prob) {
            return Err(bad("ebm.buffer_end_prob", e.buffer_end_prob, "must be in [0, 1]"));
        }
        positive("ebm.gap_threshold", e.gap_threshold)?;
        at_least("ebm.patience", e.patience, 1)?;
        positive("sampler.step_size", self.sampler.step_size)?;
        let ev = &self.eval;
        let g = GridSpec { bounds: ev.grid_bounds, resolution: ev.grid_resolution };
        g.validate().map_err(|err| bad("eval.grid_bounds / eval.grid_resolution", format!("{:?} / {}", g.bounds, g.resolution), &err.to_string()))?;
        at_least("eval.iwae_k", ev.iwae_k, 1)?;
        at_least("eval.grid_iwae_k", ev.grid_iwae_k, 1)?;
        at_least("eval.score_k", ev.score_k, 1)?;
        at_least("eval.n_test_ll", ev.n_test_ll, 1)?;
        at_least("eval.n_samples", ev.n_samples, 1)?;
        at_least("eval.n_score", ev.n_score, 1)?;
        positive("eval.mode_radius_std", ev.mode_radius_std)?;
        if ev.mode_radius_std * d.component_std >= 0.5 {
            return Err(bad("eval.mode_radius_std", ev.mode_radius_std, "radius must stay below half the center spacing"));
        }
        at_least("eval.hist_bins", ev.hist_bins, 10)?;
        Ok(())
    }

    pub fn vae_train(&self) -> VaeTrainConfig {
        let v = &self.vae;
        VaeTrainConfig {
            arch: VaeArch { hidden_width: v.hidden_width, depth: v.depth, latent_dim: v.latent_dim },
            epochs: v.epochs,
            batch_size: v.batch_size,
            lr: v.lr,
            weight_decay: v.weight_decay,
            kl_anneal_frac: v.kl_anneal_frac,
        }
    }

    pub fn energy_arch(&self) -> EnergyArch {
        let e = &self.ebm;
        EnergyArch {
            hidden_width: e.hidden_width,
            depth: e.depth,
            input_gain: e.input_gain,
            input_bias_std: e.input_bias_std,
        }
    }

    pub fn ebm_train(&self) -> EbmTrainConfig {
        let e = &self.ebm;
        EbmTrainConfig {
            arch: self.energy_arch(),
            lr: e.lr,
            lr_final_frac: e.lr_final_frac,
            beta1: e.beta1,
            weight_decay: e.weight_decay,
            iterations: e.iterations,
            batch_size: e.batch_size,
            l2_coeff: e.l2_coeff,
            persistent: e.persistent,
            buffer_capacity: e.buffer_capacity,
            buffer_end_prob: e.buffer_end_prob,
            buffer_ramp_steps: e.buffer_ramp_steps,
            clip: e.clip,
            gap_threshold: e.gap_threshold,
            patience: e.patience,
        }
    }

    /// Chains used for training negatives.
    pub fn train_langevin(&self) -> LangevinConfig {
        LangevinConfig { steps: self.sampler.steps, step_size: self.sampler.step_size, seed: 0, trace_every: 0 }
    }

    pub fn eval_langevin(&self, seed: u64) -> LangevinConfig {
        LangevinConfig { steps: self.sampler.eval_steps, step_size: self.sampler.step_size, seed, trace_every: 0 }
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec { bounds: self.eval.grid_bounds, resolution: self.eval.grid_resolution }
    }
}
