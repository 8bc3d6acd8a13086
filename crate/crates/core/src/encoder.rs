//! Feature extractor: a small rectified MLP, or an identity passthrough for
//! data that is already embedded.

use crate::error::{shape_err, Result};
use crate::model::Parameterized;
use crate::numcore::{Matrix, Rng, Tape, Var};

/// Hidden width of the default encoder.
pub const DEFAULT_HIDDEN: usize = 64;

/// One affine layer. `weight` is `out × in`, `bias` is `1 × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Matrix,
}

/// Encoder parameters. With no layers the encoder is the identity map.
///
/// A rectifier follows every layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    input_dim: usize,
    layers: Vec<DenseLayer>,
}

/// Uniform in `±√(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-limit, limit)).collect();
    Matrix::from_raw(rows, cols, data)
}

impl EncoderParams {
    /// MLP through `dims = [input, hidden…, output]` with Glorot-uniform weights and zero biases.
    pub fn mlp(dims: &[usize], rng: &mut Rng) -> Result<Self> {
        Self::build(dims, |out, inp| glorot_uniform(out, inp, rng))
    }

    /// Desk-scale default: `input → 64 → output`.
    pub fn default_mlp(input_dim: usize, output_dim: usize, rng: &mut Rng) -> Result<Self> {
        Self::mlp(&[input_dim, DEFAULT_HIDDEN, output_dim], rng)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::build(dims, Matrix::zeros)
    }

    pub fn identity(dim: usize) -> Self {
        Self { input_dim: dim, layers: Vec::new() }
    }

    fn build(dims: &[usize], mut weight: impl FnMut(usize, usize) -> Matrix) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(shape_err!("encoder dims {dims:?} need at least two positive sizes"));
        }
        let layers =
            dims.windows(2).map(|w| DenseLayer { weight: weight(w[1], w[0]), bias: Matrix::zeros(1, w[1]) }).collect();
        Ok(Self { input_dim: dims[0], layers })
    }

    pub fn from_layers(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        let mut width = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.weight.cols() != width {
                return Err(shape_err!("layer {i} expects {} inputs but receives {width}", l.weight.cols()));
            }
            if l.bias.shape() != (1, l.weight.rows()) {
                return Err(shape_err!("layer {i} bias must be 1x{}", l.weight.rows()));
            }
            width = l.weight.rows();
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.weight.rows())
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn is_identity(&self) -> bool {
        self.layers.is_empty()
    }

    /// Register every weight and bias as trainable on `tape`.
    pub fn register(&self, tape: &mut Tape) -> EncoderVars {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                (
                    tape.param(format!("encoder.{i}.weight"), l.weight.clone()),
                    tape.param(format!("encoder.{i}.bias"), l.bias.clone()),
                )
            })
            .collect();
        EncoderVars { input_dim: self.input_dim, layers }
    }

    /// Same as [`register`](Self::register) but frozen.
    pub fn register_frozen(&self, tape: &mut Tape) -> EncoderVars {
        let layers =
            self.layers.iter().map(|l| (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))).collect();
        EncoderVars { input_dim: self.input_dim, layers }
    }
}

impl Parameterized for EncoderParams {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| [(format!("encoder.{i}.weight"), &l.weight), (format!("encoder.{i}.bias"), &l.bias)])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

/// Encoder parameters living on a tape.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    input_dim: usize,
    layers: Vec<(Var, Var)>,
}

impl EncoderVars {
    /// Rebuild from handles in [`Parameterized::named_params`] order.
    pub fn from_flat(input_dim: usize, vars: &[Var]) -> Self {
        Self { input_dim, layers: vars.chunks(2).map(|c| (c[0], c[1])).collect() }
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

pub fn encode_on_tape(tape: &mut Tape, enc: &EncoderVars, x: Var) -> Result<Var> {
    let cols = tape.value(x).cols();
    if cols != enc.input_dim {
        return Err(shape_err!("encoder expects {} features, batch has {cols}", enc.input_dim));
    }
    let mut h = x;
    let last = enc.layers.len().saturating_sub(1);
    for (i, &(w, b)) in enc.layers.iter().enumerate() {
        h = tape.matmul_t(h, w)?;
        h = tape.add_row_bias(h, b)?;
        if i < last {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Forward pass with frozen parameters.
pub fn encode(params: &EncoderParams, batch: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let x = tape.constant(batch.clone());
    let out = encode_on_tape(&mut tape, &vars, x)?;
    Ok(tape.value(out).clone())
}
