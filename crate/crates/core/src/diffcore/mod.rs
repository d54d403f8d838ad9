//! Reverse-mode automatic differentiation over dense `f64` tensors, plus the
//! MLP and optimizer pieces the models are built from.

mod adam;
mod density;
mod gradcheck;
mod mlp;
mod tape;
mod tensor;

pub use adam::{adam_step, clip_gradients, AdamConfig, AdamState, ClipRule};
pub use density::{gaussian_log_density, gaussian_log_density_rows, std_normal_log_density, HALF_LN_2PI};
pub use gradcheck::finite_diff_grad;
pub use mlp::{mlp_forward, Activation, BoundMlp, Linear, MlpParams};
pub use tape::{sigmoid, swish, Tape, Var};
pub use tensor::Tensor;
