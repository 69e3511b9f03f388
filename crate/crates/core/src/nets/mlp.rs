//! Two-layer perceptron with a flat parameter vector and a hand-derived
//! backward pass.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => tanh(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// `tanh` through a single `exp`; libm's version is several times slower and
/// dominates training time.
fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// `input -> hidden (activation) -> output` logits.
///
/// Parameter layout: `w1` (hidden x input, row-major), `b1`, `w2`
/// (output x hidden), `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroNet {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub activation: Activation,
    pub params: Vec<f64>,
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub inputs: Array2<f64>,
    pub hidden: Array2<f64>,
    pub logits: Array2<f64>,
}

impl MicroNet {
    pub fn param_count(input: usize, hidden: usize, output: usize) -> usize {
        hidden * input + hidden + output * hidden + output
    }

    pub fn zeros(input: usize, hidden: usize, output: usize, activation: Activation) -> Self {
        Self { input, hidden, output, activation, params: vec![0.0; Self::param_count(input, hidden, output)] }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(input: usize, hidden: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let mut net = Self::zeros(input, hidden, output, activation);
        let a1 = (6.0 / (input + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + output) as f64).sqrt();
        let (w1, rest) = net.params.split_at_mut(hidden * input);
        w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..a1));
        let w2 = &mut rest[hidden..hidden + output * hidden];
        w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..a2));
        net
    }

    pub fn from_params(input: usize, hidden: usize, output: usize, activation: Activation, params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::param_count(input, hidden, output) {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                Self::param_count(input, hidden, output),
                params.len()
            )));
        }
        Ok(Self { input, hidden, output, activation, params })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn same_shape(&self, other: &MicroNet) -> bool {
        self.input == other.input && self.hidden == other.hidden && self.output == other.output && self.activation == other.activation
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = self.hidden * self.input;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.output * self.hidden;
        [w1, b1, w2, w2 + self.output]
    }

    fn w1(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.hidden, self.input), &self.params[..self.offsets()[0]]).expect("w1 shape")
    }

    fn w2(&self) -> ArrayView2<'_, f64> {
        let o = self.offsets();
        ArrayView2::from_shape((self.output, self.hidden), &self.params[o[1]..o[2]]).expect("w2 shape")
    }

    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<ForwardPass> {
        if inputs.ncols() != self.input {
            return Err(Error::Contract(format!("net expects {} inputs per row, got {}", self.input, inputs.ncols())));
        }
        let o = self.offsets();
        let b1 = &self.params[o[0]..o[1]];
        let b2 = &self.params[o[2]..o[3]];
        let mut hidden = inputs.dot(&self.w1().t());
        for mut row in hidden.rows_mut() {
            for (h, b) in row.iter_mut().zip(b1) {
                *h = self.activation.apply(*h + b);
            }
        }
        let mut logits = hidden.dot(&self.w2().t());
        for mut row in logits.rows_mut() {
            for (z, b) in row.iter_mut().zip(b2) {
                *z += b;
            }
        }
        Ok(ForwardPass { inputs: inputs.to_owned(), hidden, logits })
    }

    /// Logits only.
    pub fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(inputs)?.logits)
    }

    /// Gradient of `sum(logits * upstream)` with respect to the flat
    /// parameter vector.
    pub fn backward(&self, pass: &ForwardPass, upstream: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if upstream.dim() != pass.logits.dim() {
            return Err(Error::Contract(format!(
                "upstream gradient shape {:?} does not match logits {:?}",
                upstream.dim(),
                pass.logits.dim()
            )));
        }
        let mut grad = vec![0.0; self.len()];
        let o = self.offsets();
        let d_w2 = upstream.t().dot(&pass.hidden);
        let d_b2 = upstream.sum_axis(Axis(0));
        let mut d_hidden = upstream.dot(&self.w2());
        for (d, &h) in d_hidden.iter_mut().zip(pass.hidden.iter()) {
            *d *= self.activation.derivative_from_output(h);
        }
        let d_w1 = d_hidden.t().dot(&pass.inputs);
        let d_b1 = d_hidden.sum_axis(Axis(0));
        grad[..o[0]].iter_mut().zip(d_w1.iter()).for_each(|(g, v)| *g = *v);
        grad[o[0]..o[1]].iter_mut().zip(d_b1.iter()).for_each(|(g, v)| *g = *v);
        grad[o[1]..o[2]].iter_mut().zip(d_w2.iter()).for_each(|(g, v)| *g = *v);
        grad[o[2]..o[3]].iter_mut().zip(d_b2.iter()).for_each(|(g, v)| *g = *v);
        Ok(grad)
    }

    /// Sets every output bias to `bias` (zeroing nothing else).
    pub fn set_output_bias(&mut self, bias: &[f64]) {
        let o = self.offsets();
        self.params[o[2]..o[3]].copy_from_slice(bias);
    }

    pub fn weights_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let o = self.offsets();
        let (w1, rest) = self.params.split_at_mut(o[0]);
        let (b1, rest) = rest.split_at_mut(o[1] - o[0]);
        let (w2, b2) = rest.split_at_mut(o[2] - o[1]);
        (w1, b1, w2, b2)
    }
}
