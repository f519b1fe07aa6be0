use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Conv2d, Dense, Layer};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-parameter gradients, in the owning model's `parameters()` order.
pub type Gradients = Vec<Tensor>;

/// Anything that exposes a flat, ordered list of learnable tensors.
pub trait Parameterized {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn zero_gradients(&self) -> Gradients {
        self.parameters().iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }
}

/// A feed-forward stack of layers operating on `(batch, features)` activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    input_size: usize,
    layers: Vec<Layer>,
}

/// Activations recorded by a forward pass; `activations[i]` is the input of layer `i`
/// and the last entry is the network output.
#[derive(Debug, Clone)]
pub struct Trace {
    activations: Vec<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace always holds the input")
    }
}

impl Sequential {
    pub fn new(input_size: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_size == 0 {
            return Err(Error::config("network input size must be positive"));
        }
        let mut width = input_size;
        for (i, layer) in layers.iter().enumerate() {
            if let Some(expected) = layer.input_size() {
                if expected != width {
                    return Err(Error::config(format!(
                        "layer {i} ({}) expects {expected} inputs but receives {width}",
                        layer.name()
                    )));
                }
            }
            width = layer.output_size(width);
        }
        Ok(Sequential { input_size, layers })
    }

    /// Dense layers of the given widths with ReLU between them (none after the last).
    pub fn mlp<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config("an mlp needs at least input and output widths"));
        }
        let mut layers = Vec::new();
        for (i, pair) in sizes.windows(2).enumerate() {
            layers.push(Layer::Dense(Dense::new(pair[0], pair[1], rng)?));
            if i + 2 < sizes.len() {
                layers.push(Layer::Relu);
            }
        }
        Sequential::new(sizes[0], layers)
    }

    /// Convolutions (each followed by ReLU) over a `(c, h, w)` input, then an mlp head.
    pub fn conv_mlp<R: Rng>(
        input: [usize; 3],
        channels: &[usize],
        kernel: usize,
        stride: usize,
        dense: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut dims = input;
        for &ch in channels {
            let conv = Conv2d::new(dims, ch, kernel, stride, rng)?;
            dims = conv.output_dims();
            layers.push(Layer::Conv2d(conv));
            layers.push(Layer::Relu);
        }
        let mut width: usize = dims.iter().product();
        for (i, &next) in dense.iter().enumerate() {
            layers.push(Layer::Dense(Dense::new(width, next, rng)?));
            if i + 1 < dense.len() {
                layers.push(Layer::Relu);
            }
            width = next;
        }
        Sequential::new(input.iter().product(), layers)
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn output_size(&self) -> usize {
        self.layers.iter().fold(self.input_size, |w, l| l.output_size(w))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn flatten_input(&self, input: &Tensor) -> Result<Tensor> {
        if input.shape().len() < 2 || input.row_len() != self.input_size {
            return Err(Error::config(format!(
                "input of shape {:?} does not match network input size {} (layer 0)",
                input.shape(),
                self.input_size
            )));
        }
        let b = input.batch();
        input.clone().reshape(vec![b, self.input_size])
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = self.flatten_input(input)?;
        for layer in &self.layers {
            x = layer.forward(&x);
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &Tensor) -> Result<Trace> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(self.flatten_input(input)?);
        for layer in &self.layers {
            let next = layer.forward(activations.last().unwrap());
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient with respect to
    /// the network input when `need_input` is set.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_output: &Tensor,
        grads: &mut [Tensor],
        need_input: bool,
    ) -> Result<Option<Tensor>> {
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::usage("trace was recorded by a different network"));
        }
        let out = trace.output();
        if grad_output.shape() != out.shape() {
            return Err(Error::config(format!(
                "output gradient {:?} does not match output {:?}",
                grad_output.shape(),
                out.shape()
            )));
        }
        let n_params: usize = self.layers.iter().map(|l| l.parameters().len()).sum();
        if grads.len() != n_params {
            return Err(Error::usage("gradient buffer does not match network parameters"));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offsets.push(acc);
            acc += l.parameters().len();
        }
        let mut g = grad_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let np = layer.parameters().len();
            let slot = &mut grads[offsets[i]..offsets[i] + np];
            let want = need_input || i > 0;
            match layer.backward(&trace.activations[i], &g, slot, want) {
                Some(next) => g = next,
                None => return Ok(None),
            }
        }
        Ok(need_input.then_some(g))
    }
}

impl Parameterized for Sequential {
    fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.parameters_mut()).collect()
    }
}

/// Forward/backward session that owns the recorded activations between the two passes.
pub struct Tape<'n> {
    net: &'n Sequential,
    trace: Option<Trace>,
}

impl<'n> Tape<'n> {
    pub fn new(net: &'n Sequential) -> Self {
        Tape { net, trace: None }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let trace = self.net.forward_trace(input)?;
        let out = trace.output().clone();
        self.trace = Some(trace);
        Ok(out)
    }

    /// Consumes the recorded pass; a second call without a new forward is a usage error.
    pub fn backward(&mut self, grad_output: &Tensor) -> Result<Gradients> {
        let trace = self
            .trace
            .take()
            .ok_or_else(|| Error::usage("backward called before forward"))?;
        let mut grads = self.net.zero_gradients();
        self.net.backward(&trace, grad_output, &mut grads, false)?;
        Ok(grads)
    }
}

/// `½ Σ (pred − target)²` and its gradient with respect to `pred`.
pub fn half_squared_error(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::config(format!(
            "prediction {:?} and target {:?} differ in shape",
            pred.shape(),
            target.shape()
        )));
    }
    let mut grad = pred.clone();
    let mut loss = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        *g -= t;
        loss += 0.5 * *g * *g;
    }
    Ok((loss, grad))
}

/// Mean of `(pred − target)²` over all entries and its gradient.
pub fn mean_squared_error(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let (half, mut grad) = half_squared_error(pred, target)?;
    let n = pred.len() as f64;
    grad.scale(2.0 / n);
    Ok((2.0 * half / n, grad))
}
