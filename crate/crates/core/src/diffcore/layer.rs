use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Fully connected layer, `y = W x + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// 2-D convolution over `(channels, height, width)` feature maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    /// `(out_ch, in_ch, k, k)`
    pub weights: Tensor,
    /// `(out_ch)`
    pub bias: Tensor,
    /// `(in_ch, height, width)` of one input sample.
    pub input: [usize; 3],
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Relu,
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..=limit)).collect()
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::config("dense layer needs positive input and output sizes"));
        }
        let w = glorot(rng, inputs, outputs, inputs * outputs);
        Ok(Dense {
            weights: Tensor::new(vec![outputs, inputs], w)?,
            bias: Tensor::zeros(&[outputs]),
        })
    }

    pub fn from_parts(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.shape().len() != 2 || bias.shape() != [weights.shape()[0]] {
            return Err(Error::config(format!(
                "dense weights {:?} / bias {:?} do not match",
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Dense { weights, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let batch = x.batch();
        let w = self.weights.data();
        let b = self.bias.data();
        let mut out = vec![0.0; batch * n_out];
        let nz = sparse_rows(x, n_in);
        // weight row outermost so it stays cached across the batch
        for o in 0..n_out {
            let wr = &w[o * n_in..(o + 1) * n_in];
            for r in 0..batch {
                let xr = x.row_slice(r);
                let mut s = b[o];
                match &nz[r] {
                    // Skipping exact zeros leaves every sum bit-identical to the dense loop.
                    Some(idx) => {
                        for &i in idx {
                            s += wr[i as usize] * xr[i as usize];
                        }
                    }
                    None => {
                        for (wi, xi) in wr.iter().zip(xr) {
                            s += wi * xi;
                        }
                    }
                }
                out[r * n_out + o] = s;
            }
        }
        Tensor::new(vec![batch, n_out], out).expect("dense output shape")
    }

    fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        dw: &mut Tensor,
        db: &mut Tensor,
        need_input: bool,
    ) -> Option<Tensor> {
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let batch = x.batch();
        let w = self.weights.data();
        let dwd = dw.data_mut();
        let nz = sparse_rows(x, n_in);
        for o in 0..n_out {
            let row = &mut dwd[o * n_in..(o + 1) * n_in];
            for r in 0..batch {
                let g = grad_out.row_slice(r)[o];
                if g == 0.0 {
                    continue;
                }
                db.data_mut()[o] += g;
                let xr = x.row_slice(r);
                match &nz[r] {
                    Some(idx) => {
                        for &i in idx {
                            row[i as usize] += g * xr[i as usize];
                        }
                    }
                    None => {
                        for (d, xi) in row.iter_mut().zip(xr) {
                            *d += g * xi;
                        }
                    }
                }
            }
        }
        if !need_input {
            return None;
        }
        let mut dx = vec![0.0; batch * n_in];
        for r in 0..batch {
            let gr = grad_out.row_slice(r);
            let dxr = &mut dx[r * n_in..(r + 1) * n_in];
            for (o, &g) in gr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let wr = &w[o * n_in..(o + 1) * n_in];
                for (d, wi) in dxr.iter_mut().zip(wr) {
                    *d += g * wi;
                }
            }
        }
        Some(Tensor::new(vec![batch, n_in], dx).expect("dense input grad shape"))
    }
}

/// Nonzero column indices of each row that is mostly zeros, `None` for dense rows.
fn sparse_rows(x: &Tensor, n_in: usize) -> Vec<Option<Vec<u32>>> {
    (0..x.batch())
        .map(|r| {
            let xr = x.row_slice(r);
            let nnz = xr.iter().map(|v| (*v != 0.0) as usize).sum::<usize>();
            (nnz * 2 < n_in).then(|| (0..n_in as u32).filter(|&i| xr[i as usize] != 0.0).collect())
        })
        .collect()
}

impl Conv2d {
    /// Square `kernel`, padding `(kernel - 1) / 2` so that stride 1 keeps spatial size.
    pub fn new<R: Rng>(
        input: [usize; 3],
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_padding(input, out_channels, kernel, stride, (kernel.max(1) - 1) / 2, rng)
    }

    pub fn with_padding<R: Rng>(
        input: [usize; 3],
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input.contains(&0) || out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(Error::config("conv2d sizes must be positive"));
        }
        let [c, h, w] = input;
        if h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(Error::config(format!(
                "conv2d kernel {kernel} larger than padded input {h}x{w}"
            )));
        }
        let n = out_channels * c * kernel * kernel;
        let weights = glorot(rng, c * kernel * kernel, out_channels * kernel * kernel, n);
        Ok(Conv2d {
            weights: Tensor::new(vec![out_channels, c, kernel, kernel], weights)?,
            bias: Tensor::zeros(&[out_channels]),
            input,
            stride,
            padding,
        })
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    /// `(out_ch, out_h, out_w)`
    pub fn output_dims(&self) -> [usize; 3] {
        let [_, h, w] = self.input;
        let k = self.kernel();
        let oh = (h + 2 * self.padding - k) / self.stride + 1;
        let ow = (w + 2 * self.padding - k) / self.stride + 1;
        [self.out_channels(), oh, ow]
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let [ic, h, w] = self.input;
        let [oc, oh, ow] = self.output_dims();
        let k = self.kernel();
        let (s, p) = (self.stride as isize, self.padding as isize);
        let wt = self.weights.data();
        let batch = x.batch();
        let mut out = vec![0.0; batch * oc * oh * ow];
        for b in 0..batch {
            let xb = x.row_slice(b);
            let yb = &mut out[b * oc * oh * ow..(b + 1) * oc * oh * ow];
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = self.bias.data()[o];
                        for c in 0..ic {
                            for ky in 0..k {
                                let iy = oy as isize * s + ky as isize - p;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = ox as isize * s + kx as isize - p;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += wt[((o * ic + c) * k + ky) * k + kx]
                                        * xb[(c * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        yb[(o * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![batch, oc * oh * ow], out).expect("conv output shape")
    }

    fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        dw: &mut Tensor,
        db: &mut Tensor,
        need_input: bool,
    ) -> Option<Tensor> {
        let [ic, h, w] = self.input;
        let [oc, oh, ow] = self.output_dims();
        let k = self.kernel();
        let (s, p) = (self.stride as isize, self.padding as isize);
        let wt = self.weights.data();
        let batch = x.batch();
        let mut dx = if need_input { vec![0.0; batch * ic * h * w] } else { Vec::new() };
        let dwd = dw.data_mut();
        for b in 0..batch {
            let xb = x.row_slice(b);
            let gb = grad_out.row_slice(b);
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = gb[(o * oh + oy) * ow + ox];
                        if g == 0.0 {
                            continue;
                        }
                        db.data_mut()[o] += g;
                        for c in 0..ic {
                            for ky in 0..k {
                                let iy = oy as isize * s + ky as isize - p;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = ox as isize * s + kx as isize - p;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let wi = ((o * ic + c) * k + ky) * k + kx;
                                    let xi = (c * h + iy as usize) * w + ix as usize;
                                    dwd[wi] += g * xb[xi];
                                    if need_input {
                                        dx[b * ic * h * w + xi] += g * wt[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        need_input.then(|| Tensor::new(vec![batch, ic * h * w], dx).expect("conv input grad"))
    }
}

impl Layer {
    /// Per-sample input width this layer insists on, `None` for shape-agnostic layers.
    pub fn input_size(&self) -> Option<usize> {
        match self {
            Layer::Dense(d) => Some(d.inputs()),
            Layer::Conv2d(c) => Some(c.input.iter().product()),
            Layer::Relu => None,
        }
    }

    pub fn output_size(&self, input: usize) -> usize {
        match self {
            Layer::Dense(d) => d.outputs(),
            Layer::Conv2d(c) => c.output_dims().iter().product(),
            Layer::Relu => input,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
        }
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.weights, &d.bias],
            Layer::Conv2d(c) => vec![&c.weights, &c.bias],
            Layer::Relu => vec![],
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weights, &mut c.bias],
            Layer::Relu => vec![],
        }
    }

    /// `x` is `(batch, input_size)`.
    pub(crate) fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Conv2d(c) => c.forward(x),
            Layer::Relu => {
                let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                Tensor::new(x.shape().to_vec(), data).expect("relu shape")
            }
        }
    }

    /// `grads` holds this layer's parameter gradients in `parameters()` order.
    pub(crate) fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        grads: &mut [Tensor],
        need_input: bool,
    ) -> Option<Tensor> {
        match self {
            Layer::Dense(d) => {
                let (dw, db) = grads.split_at_mut(1);
                d.backward(x, grad_out, &mut dw[0], &mut db[0], need_input)
            }
            Layer::Conv2d(c) => {
                let (dw, db) = grads.split_at_mut(1);
                c.backward(x, grad_out, &mut dw[0], &mut db[0], need_input)
            }
            Layer::Relu => {
                if !need_input {
                    return None;
                }
                // Subgradient 0 at the kink.
                let data = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
                    .collect();
                Some(Tensor::new(x.shape().to_vec(), data).expect("relu grad shape"))
            }
        }
    }
}
