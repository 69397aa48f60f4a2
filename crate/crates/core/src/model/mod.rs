//! Feed-forward softmax classifier.
//!
//! Parameters live in one flat buffer. Layer `l` stores its `out x in` weight matrix row-major, followed by its bias.

mod checkpoint;
mod net;
mod train;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

pub use checkpoint::{decode_params, encode_params, read_params, write_params, PARAMS_MAGIC};
pub use net::{
    accuracy, argmax, embed, forward_probs, logits, loss_and_grad, mean_loss, predict_probs,
    softmax, LossTag,
};
pub use train::{retrain_from_scratch, train, Sgd, TrainConfig};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Hidden widths and nonlinearity of a classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            activation: Activation::Tanh,
        }
    }
}

impl Architecture {
    pub fn sizes(&self, n_dims: usize, n_classes: usize) -> Vec<usize> {
        let mut sizes = vec![n_dims];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(n_classes);
        sizes
    }

    /// Seeded initialization for the given problem shape.
    pub fn init(&self, n_dims: usize, n_classes: usize, seed: u64) -> Result<ModelParams> {
        ModelParams::init(&self.sizes(n_dims, n_classes), self.activation, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    sizes: Vec<usize>,
    values: Vec<f64>,
    activation: Activation,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl ModelParams {
    /// All-zero parameters for layer widths `sizes = [n_dims, hidden.., n_classes]`.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::arg(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            values: vec![0.0; param_count(sizes)],
            activation,
        })
    }

    /// Uniform in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(sizes, activation)?;
        let mut rng = rng::stream(seed, rng::INIT);
        for l in 0..p.n_layers() {
            let bound = 1.0 / (p.sizes[l] as f64).sqrt();
            let (w, b) = p.layer_mut(l);
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn from_layers(
        weights: &[Matrix],
        biases: &[Vec<f64>],
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::arg("need one bias vector per weight matrix"));
        }
        let mut sizes = vec![weights[0].cols()];
        for (l, (w, b)) in weights.iter().zip(biases).enumerate() {
            if w.cols() != *sizes.last().unwrap() || b.len() != w.rows() {
                return Err(Error::arg(format!("layer {l} shapes do not compose")));
            }
            sizes.push(w.rows());
        }
        let mut p = Self::zeros(&sizes, activation)?;
        for (l, (w, b)) in weights.iter().zip(biases).enumerate() {
            let (dw, db) = p.layer_mut(l);
            dw.copy_from_slice(w.as_slice());
            db.copy_from_slice(b);
        }
        Ok(p)
    }

    pub(crate) fn from_parts(
        sizes: Vec<usize>,
        values: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let p = Self::zeros(&sizes, activation)?;
        if values.len() != p.values.len() {
            return Err(Error::arg("parameter count does not match layer sizes"));
        }
        Ok(Self { values, ..p })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_dims(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    /// `(weights, bias)` of layer `l`; weights are `out x in` row-major.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let start = self.offset(l);
        let (w, rest) = self.values[start..].split_at(n_out * n_in);
        (w, &rest[..n_out])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let start = self.offset(l);
        let (w, rest) = self.values[start..].split_at_mut(n_out * n_in);
        (w, &mut rest[..n_out])
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            sizes: self.sizes.clone(),
            values: vec![0.0; self.values.len()],
            activation: self.activation,
        }
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.sizes == other.sizes && self.activation == other.activation
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &ModelParams) {
        debug_assert!(self.same_shape(other));
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &ModelParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
