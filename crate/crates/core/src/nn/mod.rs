//! Small differentiable networks: dense and 1-D convolutional layers with
//! hand-written backpropagation over a flat parameter vector.
//!
//! Tensors are flat `f64` slices. Convolution inputs are time-major: element
//! `(t, c)` of a `length x channels` signal lives at `t * channels + c`, so a
//! flattened convolution output feeds a dense layer without reshaping.

mod gradcheck;
mod optim;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{gradient_check, max_relative_error, numeric_gradient};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Stride 1, zero padding `kernel / 2` on both sides; preserves length.
    Conv1d {
        length: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Activation {
        activation: Activation,
    },
}

impl LayerSpec {
    fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * kernel * in_channels + out_channels,
            LayerSpec::Activation { .. } => 0,
        }
    }

    /// Output width for a given input width, or `None` when they do not compose.
    fn output_dim(&self, input: usize) -> Option<usize> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => (inputs == input).then_some(outputs),
            LayerSpec::Conv1d {
                length,
                in_channels,
                out_channels,
                ..
            } => (length * in_channels == input).then_some(length * out_channels),
            LayerSpec::Activation { .. } => Some(input),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv1d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel,
            LayerSpec::Activation { .. } => 1,
        }
    }

    fn weight_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } => inputs * outputs,
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * kernel * in_channels,
            LayerSpec::Activation { .. } => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `sum_i (y_i - t_i)^2`
    SquaredError,
    /// `mean_i (y_i - t_i)^2`
    MeanSquaredError,
}

impl Loss {
    pub fn value(self, output: &[f64], target: &[f64]) -> f64 {
        let sse: f64 = output
            .iter()
            .zip(target)
            .map(|(y, t)| (y - t) * (y - t))
            .sum();
        match self {
            Loss::SquaredError => sse,
            Loss::MeanSquaredError => sse / output.len().max(1) as f64,
        }
    }

    /// Gradient of `weight * loss` with respect to the output.
    pub fn gradient(self, output: &[f64], target: &[f64], weight: f64) -> Vec<f64> {
        let scale = match self {
            Loss::SquaredError => 2.0 * weight,
            Loss::MeanSquaredError => 2.0 * weight / output.len().max(1) as f64,
        };
        output
            .iter()
            .zip(target)
            .map(|(y, t)| scale * (y - t))
            .collect()
    }
}

/// Dot product with four independent accumulators so the compiler can vectorize.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..n {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Layer inputs recorded by [`Network::forward_trace`] for backpropagation.
#[derive(Clone, Debug)]
pub struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace holds at least the input")
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.activations.pop().expect("trace holds at least the input")
    }
}

/// A feed-forward stack of layers sharing one flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRecord", into = "NetworkRecord")]
pub struct Network {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    input_dim: usize,
    output_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct NetworkRecord {
    input_dim: usize,
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

impl TryFrom<NetworkRecord> for Network {
    type Error = Error;

    fn try_from(rec: NetworkRecord) -> Result<Self> {
        let mut net = Network::new(rec.input_dim, rec.layers)?;
        if rec.params.len() != net.params.len() {
            return Err(Error::Checkpoint(format!(
                "network expects {} parameters, record has {}",
                net.params.len(),
                rec.params.len()
            )));
        }
        if rec.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        net.params = rec.params;
        Ok(net)
    }
}

impl From<Network> for NetworkRecord {
    fn from(net: Network) -> Self {
        NetworkRecord {
            input_dim: net.input_dim,
            layers: net.layers,
            params: net.params,
        }
    }
}

impl Network {
    /// Builds a zero-initialized network, checking that layer shapes compose.
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("network input dimension must be positive".into()));
        }
        let mut width = input_dim;
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for (i, layer) in layers.iter().enumerate() {
            if let LayerSpec::Conv1d { kernel, .. } = layer {
                if kernel % 2 == 0 {
                    return Err(Error::Config(format!(
                        "layer {i}: conv1d kernel must be odd to preserve length"
                    )));
                }
            }
            width = layer.output_dim(width).ok_or_else(|| {
                Error::Config(format!("layer {i} ({layer:?}) does not accept width {width}"))
            })?;
            offsets.push(total);
            total += layer.param_count();
        }
        Ok(Network {
            layers,
            offsets,
            params: vec![0.0; total],
            input_dim,
            output_dim: width,
        })
    }

    /// Dense stack `sizes[0] -> sizes[1] -> ...` with `hidden` between layers
    /// and a linear output.
    pub fn mlp(sizes: &[usize], hidden: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config("mlp needs at least input and output sizes".into()));
        }
        let mut layers = Vec::new();
        for (i, w) in sizes.windows(2).enumerate() {
            layers.push(LayerSpec::Dense {
                inputs: w[0],
                outputs: w[1],
            });
            if i + 2 < sizes.len() {
                layers.push(LayerSpec::Activation { activation: hidden });
            }
        }
        Network::new(sizes[0], layers)
    }

    /// Uniform fan-in initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (layer, &offset) in self.layers.iter().zip(&self.offsets) {
            let bound = 1.0 / (layer.fan_in() as f64).sqrt();
            for p in &mut self.params[offset..offset + layer.param_count()] {
                *p = rng.random_range(-bound..bound);
            }
        }
    }

    /// Zeroes the weights and bias of the last parameterized layer, so the
    /// network outputs exactly zero.
    pub fn zero_output_layer(&mut self) {
        if let Some((layer, &offset)) = self
            .layers
            .iter()
            .zip(&self.offsets)
            .rev()
            .find(|(l, _)| l.param_count() > 0)
        {
            self.params[offset..offset + layer.param_count()].fill(0.0);
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            x = self.layer_forward(i, layer, &x);
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let next = self.layer_forward(i, layer, activations.last().unwrap());
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    /// Backpropagates `grad_output`, accumulating parameter gradients into
    /// `grad_params` (`+=`), and returns the gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad_params.len(), self.params.len(), "gradient buffer shape");
        assert_eq!(grad_output.len(), self.output_dim, "output gradient shape");
        let mut grad = grad_output.to_vec();
        for i in (0..self.layers.len()).rev() {
            let input = &trace.activations[i];
            let output = &trace.activations[i + 1];
            grad = self.layer_backward(i, &self.layers[i], input, output, &grad, grad_params);
        }
        grad
    }

    /// Loss and gradient of `weight * loss` with respect to every parameter.
    /// The returned loss is unweighted.
    pub fn grad(&self, loss: Loss, input: &[f64], target: &[f64], weight: f64) -> Result<(Vec<f64>, f64)> {
        if target.len() != self.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim,
                actual: target.len(),
            });
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::Config(format!("sample weight must be positive, got {weight}")));
        }
        let trace = self.forward_trace(input)?;
        let value = loss.value(trace.output(), target);
        if !value.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        let mut grad = vec![0.0; self.params.len()];
        let g_out = loss.gradient(trace.output(), target, weight);
        self.backward(&trace, &g_out, &mut grad);
        Ok((grad, value))
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: input.len(),
            });
        }
        Ok(())
    }

    fn layer_forward(&self, index: usize, layer: &LayerSpec, x: &[f64]) -> Vec<f64> {
        let p = &self.params[self.offsets[index]..self.offsets[index] + layer.param_count()];
        match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                let (w, b) = p.split_at(layer.weight_count());
                (0..outputs)
                    .map(|o| {
                        let row = &w[o * inputs..(o + 1) * inputs];
                        b[o] + dot(row, x)
                    })
                    .collect()
            }
            LayerSpec::Conv1d {
                length,
                in_channels,
                out_channels,
                kernel,
            } => {
                let (w, b) = p.split_at(layer.weight_count());
                let pad = kernel / 2;
                let mut y = vec![0.0; length * out_channels];
                for t in 0..length {
                    let out = &mut y[t * out_channels..(t + 1) * out_channels];
                    out.copy_from_slice(b);
                    for k in 0..kernel {
                        let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < length) else {
                            continue;
                        };
                        let xs = &x[src * in_channels..(src + 1) * in_channels];
                        for (o, acc) in out.iter_mut().enumerate() {
                            let wk = &w[(o * kernel + k) * in_channels..(o * kernel + k + 1) * in_channels];
                            *acc += dot(wk, xs);
                        }
                    }
                }
                y
            }
            LayerSpec::Activation { activation } => x.iter().map(|&v| activation.apply(v)).collect(),
        }
    }

    fn layer_backward(
        &self,
        index: usize,
        layer: &LayerSpec,
        x: &[f64],
        y: &[f64],
        g: &[f64],
        grad_params: &mut [f64],
    ) -> Vec<f64> {
        let offset = self.offsets[index];
        let count = layer.param_count();
        let p = &self.params[offset..offset + count];
        let gp = &mut grad_params[offset..offset + count];
        match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                let (w, _) = p.split_at(layer.weight_count());
                let (gw, gb) = gp.split_at_mut(layer.weight_count());
                let mut gx = vec![0.0; inputs];
                for o in 0..outputs {
                    let go = g[o];
                    if go == 0.0 {
                        continue;
                    }
                    gb[o] += go;
                    let row = &w[o * inputs..(o + 1) * inputs];
                    let grow = &mut gw[o * inputs..(o + 1) * inputs];
                    for i in 0..inputs {
                        grow[i] += go * x[i];
                        gx[i] += go * row[i];
                    }
                }
                gx
            }
            LayerSpec::Conv1d {
                length,
                in_channels,
                out_channels,
                kernel,
            } => {
                let (w, _) = p.split_at(layer.weight_count());
                let (gw, gb) = gp.split_at_mut(layer.weight_count());
                let pad = kernel / 2;
                let mut gx = vec![0.0; length * in_channels];
                for t in 0..length {
                    let gt = &g[t * out_channels..(t + 1) * out_channels];
                    for (o, &go) in gt.iter().enumerate() {
                        gb[o] += go;
                    }
                    for k in 0..kernel {
                        let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < length) else {
                            continue;
                        };
                        let xs = &x[src * in_channels..(src + 1) * in_channels];
                        for (o, &go) in gt.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let base = (o * kernel + k) * in_channels;
                            for c in 0..in_channels {
                                gw[base + c] += go * xs[c];
                                gx[src * in_channels + c] += go * w[base + c];
                            }
                        }
                    }
                }
                gx
            }
            LayerSpec::Activation { activation } => x
                .iter()
                .zip(y)
                .zip(g)
                .map(|((&xi, &yi), &gi)| gi * activation.derivative(xi, yi))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn identity_dense_passes_through() {
        let mut net = Network::new(3, vec![LayerSpec::Dense { inputs: 3, outputs: 3 }]).unwrap();
        let p = net.params_mut();
        p[0] = 1.0;
        p[4] = 1.0;
        p[8] = 1.0;
        let x = [0.3, -1.2, 7.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn relu_zeroes_negative_input() {
        let net = Network::new(4, vec![LayerSpec::Activation { activation: Activation::Relu }]).unwrap();
        assert_eq!(net.forward(&[-1.0, -0.5, -3.0, -1e-9]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn seeded_init_is_stable() {
        let build = || {
            let mut net = Network::mlp(&[4, 8, 2], Activation::Tanh).unwrap();
            net.init_uniform(&mut seeded(9));
            net
        };
        let x = [0.1, 0.2, -0.3, 0.4];
        let a = build().forward(&x).unwrap();
        let b = build().forward(&x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn shape_errors() {
        assert!(Network::new(
            4,
            vec![
                LayerSpec::Dense { inputs: 4, outputs: 3 },
                LayerSpec::Dense { inputs: 4, outputs: 1 },
            ]
        )
        .is_err());
        assert!(Network::new(
            6,
            vec![LayerSpec::Conv1d { length: 3, in_channels: 2, out_channels: 1, kernel: 2 }]
        )
        .is_err());
        let net = Network::mlp(&[2, 2], Activation::Relu).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn conv_preserves_length_and_pads_with_zeros() {
        // single channel, kernel [1, 1, 1]: moving sum with zero padding
        let mut net = Network::new(
            5,
            vec![LayerSpec::Conv1d { length: 5, in_channels: 1, out_channels: 1, kernel: 3 }],
        )
        .unwrap();
        net.params_mut()[..3].fill(1.0);
        let y = net.forward(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(y, vec![3.0, 6.0, 9.0, 12.0, 9.0]);
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let mut net = Network::mlp(&[3, 5, 2], Activation::Tanh).unwrap();
        net.init_uniform(&mut seeded(1));
        let x = [0.2, -0.1, 0.5];
        let y = net.forward(&x).unwrap();
        let (g, loss) = net.grad(Loss::SquaredError, &x, &y, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_weight() {
        let mut net = Network::mlp(&[3, 4, 2], Activation::Relu).unwrap();
        net.init_uniform(&mut seeded(2));
        let x = [0.3, 0.7, -0.2];
        let t = [1.0, -1.0];
        let (g1, l1) = net.grad(Loss::SquaredError, &x, &t, 1.0).unwrap();
        let (g2, l2) = net.grad(Loss::SquaredError, &x, &t, 2.0).unwrap();
        assert_eq!(l1, l2);
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
        assert!(net.grad(Loss::SquaredError, &x, &t, 0.0).is_err());
    }

    #[test]
    fn serde_round_trip_validates_params() {
        let mut net = Network::mlp(&[2, 3, 1], Activation::Tanh).unwrap();
        net.init_uniform(&mut seeded(4));
        let json = serde_json::to_string(&net).unwrap();
        let back: Network = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
        let broken = json.replacen("\"params\":[", "\"params\":[0.5,", 1);
        assert!(serde_json::from_str::<Network>(&broken).is_err());
    }
}
