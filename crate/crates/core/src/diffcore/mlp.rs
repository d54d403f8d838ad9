use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{swish, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::fill_normal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Swish,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Swish => swish(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    fn on_tape(self, tape: &mut Tape, v: Var) -> Result<Var> {
        match self {
            Activation::Swish => tape.swish(v),
            Activation::Tanh => tape.tanh(v),
            Activation::Identity => Ok(v),
        }
    }
}

/// One affine layer, `y = x · weight + bias` with `weight: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Fully connected network; `activation` follows every layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl MlpParams {
    pub fn new(layers: Vec<Linear>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.shape().len() != 2 || l.bias.len() != l.weight.cols() {
                return Err(Error::ShapeMismatch {
                    op: "mlp",
                    detail: format!("layer {}: weight {:?}, bias {:?}", i, l.weight.shape(), l.bias.shape()),
                });
            }
            if i > 0 && layers[i - 1].weight.cols() != l.weight.rows() {
                return Err(Error::ShapeMismatch {
                    op: "mlp",
                    detail: format!("layer {} expects {} inputs, previous emits {}", i, l.weight.rows(), layers[i - 1].weight.cols()),
                });
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::NonFinite { op: "mlp parameters" });
            }
        }
        Ok(MlpParams { layers, activation })
    }

    pub fn zeros(widths: &[usize], activation: Activation) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Linear { weight: Tensor::zeros(&[w[0], w[1]]), bias: Tensor::zeros(&[w[1]]) })
            .collect();
        MlpParams { layers, activation }
    }

    /// Gaussian init with variance `1/fan_in`, zero biases; the output layer is scaled by `out_gain`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], activation: Activation, out_gain: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(widths, activation);
        let n = p.layers.len();
        for (i, l) in p.layers.iter_mut().enumerate() {
            let fan_in = l.weight.rows() as f64;
            let gain = if i + 1 == n { out_gain } else { 1.0 };
            fill_normal(rng, l.weight.data_mut());
            let s = gain / fan_in.sqrt();
            l.weight.data_mut().iter_mut().for_each(|v| *v *= s);
        }
        p
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weight.rows()];
        w.extend(self.layers.iter().map(|l| l.weight.cols()));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameter tensors in declaration order (weight then bias, per layer).
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "mlp_forward",
                detail: format!("input width {} but network expects {}", cols, self.input_dim()),
            });
        }
        Ok(())
    }

    /// Tape-free forward pass over a `[rows, in]` batch. Same kernels as the
    /// tape path, so both produce bit-identical outputs.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input.cols())?;
        let last = self.layers.len() - 1;
        let mut h = Tensor::matrix(input.rows(), input.cols(), input.data().to_vec())?;
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = h.matmul(&l.weight)?;
            let cols = y.cols();
            let act = self.activation;
            for row in y.data_mut().chunks_mut(cols) {
                for (v, &b) in row.iter_mut().zip(l.bias.data()) {
                    *v += b;
                    if i != last {
                        *v = act.apply(*v);
                    }
                }
            }
            if !y.is_finite() {
                return Err(Error::NonFinite { op: "mlp_forward" });
            }
            h = y;
        }
        Ok(h)
    }

    /// Registers the parameters on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.var(l.weight.clone()), tape.var(l.bias.clone()))
                } else {
                    (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                }
            })
            .collect();
        BoundMlp { layers, activation: self.activation, input_dim: self.input_dim() }
    }
}

/// Parameters of an [`MlpParams`] living on a tape.
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    activation: Activation,
    input_dim: usize,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let cols = tape.value(input).cols();
        if cols != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "mlp_forward",
                detail: format!("input width {} but network expects {}", cols, self.input_dim),
            });
        }
        let last = self.layers.len() - 1;
        let mut h = input;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let y = tape.matmul(h, w)?;
            let y = tape.add_row(y, b)?;
            h = if i == last { y } else { self.activation.on_tape(tape, y)? };
        }
        Ok(h)
    }

    /// Handles in the same order as [`MlpParams::tensors`].
    pub fn param_vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// Convenience wrapper: binds `params` as constants and runs the forward pass.
pub fn mlp_forward(params: &MlpParams, input: Var, tape: &mut Tape) -> Result<Var> {
    params.bind(tape, false).forward(tape, input)
}
