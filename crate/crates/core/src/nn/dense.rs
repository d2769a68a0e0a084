use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{join, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Identity => z.clone(),
        }
    }
}

/// Affine layer `y = act(x W^T + b)` with `W` stored as `[out_dim x in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::shape(
                "dense layer bias",
                &[weights.nrows()],
                &[bias.len()],
            ));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// Uniform Glorot initialization, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-limit..=limit));
        Self {
            weights,
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Activation cache of one [`Mlp::forward`] call.
#[derive(Debug, Clone)]
pub struct MlpTape {
    inputs: Vec<Array2<f64>>,
    preacts: Vec<Array2<f64>>,
}

impl MlpTape {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }

    /// Smallest |pre-activation| over every relu unit; `inf` if there are none.
    /// Finite-difference checks resample inputs when this is close to zero.
    pub fn min_relu_margin(&self, layers: &[DenseLayer]) -> f64 {
        self.preacts
            .iter()
            .zip(layers)
            .filter(|(_, l)| l.activation == Activation::Relu)
            .flat_map(|(z, _)| z.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Stack of dense layers whose dimensions chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Schema("an mlp needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    "mlp layer chain",
                    &[pair[0].out_dim()],
                    &[pair[1].in_dim()],
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Relu on hidden layers, identity on the last; `widths` lists every
    /// layer's output size.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, widths: &[usize], rng: &mut R) -> Self {
        assert!(!widths.is_empty(), "mlp widths must be non-empty");
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = in_dim;
        for (i, &w) in widths.iter().enumerate() {
            let act = if i + 1 == widths.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(DenseLayer::glorot(prev, w, act, rng));
            prev = w;
        }
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, input: &Array2<f64>) -> Result<(Array2<f64>, MlpTape)> {
        if input.ncols() != self.in_dim() {
            return Err(Error::shape(
                "mlp input",
                &[input.nrows(), self.in_dim()],
                &[input.nrows(), input.ncols()],
            ));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let z = x.dot(&layer.weights.t()) + &layer.bias;
            let y = layer.activation.apply(&z);
            inputs.push(x);
            preacts.push(z);
            x = y;
        }
        Ok((x, MlpTape { inputs, preacts }))
    }

    /// Inference without keeping a tape.
    pub fn predict(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(input)?.0)
    }

    /// Returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, tape: &MlpTape, upstream: &Array2<f64>) -> Result<(Mlp, Array2<f64>)> {
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::shape(
                "mlp tape depth",
                &[self.layers.len()],
                &[tape.inputs.len()],
            ));
        }
        let expected = [tape.batch_size(), self.out_dim()];
        if upstream.dim() != (expected[0], expected[1]) {
            return Err(Error::shape(
                "mlp upstream gradient",
                &expected,
                &[upstream.nrows(), upstream.ncols()],
            ));
        }
        let mut grads: Vec<DenseLayer> = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                delta.zip_mut_with(&tape.preacts[i], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let dw = delta.t().dot(&tape.inputs[i]);
            let db = delta.sum_axis(Axis(0));
            let dx = delta.dot(&layer.weights);
            grads.push(DenseLayer {
                weights: dw,
                bias: db,
                activation: layer.activation,
            });
            delta = dx;
        }
        grads.reverse();
        Ok((Mlp { layers: grads }, delta))
    }
}

impl ParamSet for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            let w = l.weights.as_slice().expect("standard layout");
            f(&join(prefix, &format!("layers.{i}.weight")), &[l.out_dim(), l.in_dim()], w);
            let b = l.bias.as_slice().expect("standard layout");
            f(&join(prefix, &format!("layers.{i}.bias")), &[l.out_dim()], b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            let shape = [l.out_dim(), l.in_dim()];
            let w = l.weights.as_slice_mut().expect("standard layout");
            f(&join(prefix, &format!("layers.{i}.weight")), &shape, w);
            let b = l.bias.as_slice_mut().expect("standard layout");
            f(&join(prefix, &format!("layers.{i}.bias")), &[shape[0]], b);
        }
    }

    fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.in_dim(), l.out_dim(), l.activation))
                .collect(),
        }
    }
}
