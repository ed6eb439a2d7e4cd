//! Layer graph, forward pass and hand-written backpropagation.
//!
//! Activations are `(batch, time, channels)` tensors stored row-major. The
//! dense and svm models see the flattened window as a single time step, which
//! is the same memory layout as the `(window, features)` input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{sigmoid, Activation, ModelKind, ModelSpec};
use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub batch: usize,
    pub time: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(batch: usize, time: usize, channels: usize) -> Self {
        Self {
            batch,
            time,
            channels,
            data: vec![0.0; batch * time * channels],
        }
    }

    pub fn from_data(batch: usize, time: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), batch * time * channels);
        Self {
            batch,
            time,
            channels,
            data,
        }
    }

    fn rows(&self) -> usize {
        self.batch * self.time
    }

    fn reshape(mut self, time: usize, channels: usize) -> Self {
        debug_assert_eq!(self.time * self.channels, time * channels);
        self.time = time;
        self.channels = channels;
        self
    }
}

/// One named block of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Layer {
    Flatten,
    /// Weights `[out, in]` then bias `[out]`, applied per time step.
    Linear { input: usize, output: usize, offset: usize },
    /// Weights `[out, kernel, in]` then bias `[out]`, same padding along time.
    Conv { input: usize, output: usize, kernel: usize, offset: usize },
    /// `gamma`, `beta` at `offset`; running mean and variance at `buffer`.
    BatchNorm { channels: usize, offset: usize, buffer: usize },
    Act(Activation),
    Dropout(f64),
    /// Input weights `[4H, I]`, recurrent weights `[4H, H]`, bias `[4H]`;
    /// gate order input, forget, candidate, output.
    Lstm { input: usize, hidden: usize, offset: usize },
    MeanPool,
    LastStep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for batchnorm, dropout active.
    Train,
    /// Running statistics for batchnorm, no dropout.
    Inference,
}

enum Cache {
    None,
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64>, mean: Vec<f64>, var: Vec<f64>, train: bool },
    Dropout { mask: Vec<f64> },
    Lstm { gates: Vec<f64>, cells: Vec<f64> },
}

/// Intermediate values of one forward pass, consumed by [`Network::backward`].
pub struct Tape {
    inputs: Vec<Tensor>,
    caches: Vec<Cache>,
    pub output: Tensor,
}

impl Tape {
    /// One logit per batch item.
    pub fn logits(&self) -> &[f64] {
        &self.output.data
    }
}

/// A classifier's layer stack for a fixed `(window, features)` input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub(crate) kind: ModelKind,
    pub(crate) layers: Vec<Layer>,
    pub window: usize,
    pub n_features: usize,
    pub manifest: Vec<ParamEntry>,
    pub buffer_manifest: Vec<ParamEntry>,
    pub n_params: usize,
    pub n_buffers: usize,
}

struct Builder {
    layers: Vec<Layer>,
    manifest: Vec<ParamEntry>,
    buffers: Vec<ParamEntry>,
    n_params: usize,
    n_buffers: usize,
}

impl Builder {
    fn param(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.n_params;
        let e = ParamEntry { name, shape, offset };
        self.n_params += e.len();
        self.manifest.push(e);
        offset
    }

    fn buffer(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.n_buffers;
        let e = ParamEntry { name, shape, offset };
        self.n_buffers += e.len();
        self.buffers.push(e);
        offset
    }

    fn linear(&mut self, name: &str, input: usize, output: usize) {
        let offset = self.param(format!("{name}.weight"), vec![output, input]);
        self.param(format!("{name}.bias"), vec![output]);
        self.layers.push(Layer::Linear { input, output, offset });
    }

    fn batchnorm(&mut self, name: &str, channels: usize) {
        let offset = self.param(format!("{name}.gamma"), vec![channels]);
        self.param(format!("{name}.beta"), vec![channels]);
        let buffer = self.buffer(format!("{name}.running_mean"), vec![channels]);
        self.buffer(format!("{name}.running_var"), vec![channels]);
        self.layers.push(Layer::BatchNorm { channels, offset, buffer });
    }
}

impl Network {
    pub fn new(spec: &ModelSpec, window: usize, n_features: usize) -> Result<Self> {
        spec.validate()?;
        if window == 0 || n_features == 0 {
            return Err(Error::argument("input window must be non-empty"));
        }
        let mut b = Builder {
            layers: Vec::new(),
            manifest: Vec::new(),
            buffers: Vec::new(),
            n_params: 0,
            n_buffers: 0,
        };
        let flat = window * n_features;
        let post = |b: &mut Builder, i: usize, width: usize, act: Option<Activation>| {
            if spec.batchnorm {
                b.batchnorm(&format!("bn{i}"), width);
            }
            if let Some(a) = act {
                b.layers.push(Layer::Act(a));
            }
            if spec.dropout > 0.0 {
                b.layers.push(Layer::Dropout(spec.dropout));
            }
        };
        let mut width;
        match spec.kind {
            ModelKind::Svm => {
                b.layers.push(Layer::Flatten);
                width = flat;
            }
            ModelKind::Dense => {
                b.layers.push(Layer::Flatten);
                width = flat;
                for (i, &h) in spec.hidden.iter().enumerate() {
                    b.linear(&format!("dense{i}"), width, h);
                    post(&mut b, i, h, Some(spec.activation));
                    width = h;
                }
            }
            ModelKind::Cnn => {
                width = n_features;
                for (i, &h) in spec.hidden.iter().enumerate() {
                    let offset = b.param(format!("conv{i}.weight"), vec![h, spec.kernel, width]);
                    b.param(format!("conv{i}.bias"), vec![h]);
                    b.layers.push(Layer::Conv { input: width, output: h, kernel: spec.kernel, offset });
                    post(&mut b, i, h, Some(spec.activation));
                    width = h;
                }
                b.layers.push(Layer::MeanPool);
            }
            ModelKind::Lstm => {
                width = n_features;
                for (i, &h) in spec.hidden.iter().enumerate() {
                    let offset = b.param(format!("lstm{i}.w_input"), vec![4 * h, width]);
                    b.param(format!("lstm{i}.w_hidden"), vec![4 * h, h]);
                    b.param(format!("lstm{i}.bias"), vec![4 * h]);
                    b.layers.push(Layer::Lstm { input: width, hidden: h, offset });
                    post(&mut b, i, h, None);
                    width = h;
                }
                b.layers.push(Layer::LastStep);
            }
        }
        b.linear("head", width, 1);
        Ok(Network {
            kind: spec.kind,
            layers: b.layers,
            window,
            n_features,
            manifest: b.manifest,
            buffer_manifest: b.buffers,
            n_params: b.n_params,
            n_buffers: b.n_buffers,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Glorot-uniform weights, zero biases (forget-gate bias 1), unit
    /// batchnorm scale; running statistics start at mean 0, variance 1.
    pub fn init<R: Rng>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let mut params = vec![0.0; self.n_params];
        let mut buffers = vec![0.0; self.n_buffers];
        let glorot = |dst: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut R| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            dst.iter_mut().for_each(|w| *w = rng.gen_range(-a..a));
        };
        for layer in &self.layers {
            match *layer {
                Layer::Linear { input, output, offset } => {
                    // the linear svm starts from the origin
                    if self.kind != ModelKind::Svm {
                        glorot(&mut params[offset..offset + input * output], input, output, rng);
                    }
                }
                Layer::Conv { input, output, kernel, offset } => {
                    let n = output * kernel * input;
                    glorot(&mut params[offset..offset + n], input * kernel, output * kernel, rng);
                }
                Layer::Lstm { input, hidden, offset } => {
                    let h4 = 4 * hidden;
                    let wx = offset;
                    let wh = wx + h4 * input;
                    let bias = wh + h4 * hidden;
                    glorot(&mut params[wx..wh], input, h4, rng);
                    glorot(&mut params[wh..bias], hidden, h4, rng);
                    params[bias + hidden..bias + 2 * hidden].iter_mut().for_each(|b| *b = 1.0);
                }
                Layer::BatchNorm { channels, offset, buffer } => {
                    params[offset..offset + channels].iter_mut().for_each(|g| *g = 1.0);
                    buffers[buffer + channels..buffer + 2 * channels].iter_mut().for_each(|v| *v = 1.0);
                }
                _ => {}
            }
        }
        (params, buffers)
    }

    /// Builds a `(batch, window, features)` tensor from flattened windows.
    pub fn input_tensor(&self, windows: &[&[f64]]) -> Result<Tensor> {
        let d = self.window * self.n_features;
        let mut data = Vec::with_capacity(windows.len() * d);
        for w in windows {
            if w.len() != d {
                return Err(Error::argument(format!("window has {} values, expected {d}", w.len())));
            }
            data.extend_from_slice(w);
        }
        Ok(Tensor::from_data(windows.len(), self.window, self.n_features, data))
    }

    pub fn forward<R: Rng>(
        &self,
        params: &[f64],
        buffers: &[f64],
        input: Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Tape {
        debug_assert_eq!(params.len(), self.n_params);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input;
        for layer in &self.layers {
            let (y, cache) = layer.forward(params, buffers, &x, mode, rng);
            inputs.push(x);
            caches.push(cache);
            x = y;
        }
        Tape {
            inputs,
            caches,
            output: x,
        }
    }

    /// Backpropagates `d_logits` (one value per batch item), accumulating
    /// parameter gradients into `grads`.
    pub fn backward(&self, params: &[f64], buffers: &[f64], tape: &Tape, d_logits: &[f64], grads: &mut [f64]) {
        let out = &tape.output;
        let mut dy = Tensor::from_data(out.batch, out.time, out.channels, d_logits.to_vec());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            dy = layer.backward(params, buffers, &tape.inputs[i], &tape.caches[i], dy, grads);
        }
    }

    /// Exponential moving average of the batch statistics seen in `tape`.
    pub fn update_running_stats(&self, tape: &Tape, buffers: &mut [f64]) {
        for (layer, cache) in self.layers.iter().zip(&tape.caches) {
            if let (Layer::BatchNorm { channels, buffer, .. }, Cache::BatchNorm { mean, var, train: true, .. }) = (layer, cache) {
                for c in 0..*channels {
                    let rm = &mut buffers[buffer + c];
                    *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * mean[c];
                    let rv = &mut buffers[buffer + channels + c];
                    *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * var[c];
                }
            }
        }
    }
}

/// Four independent accumulators so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Layer {
    fn forward<R: Rng>(&self, params: &[f64], buffers: &[f64], x: &Tensor, mode: Mode, rng: &mut R) -> (Tensor, Cache) {
        match *self {
            Layer::Flatten => (x.clone().reshape(1, x.time * x.channels), Cache::None),
            Layer::Linear { input, output, offset } => {
                let w = &params[offset..offset + input * output];
                let b = &params[offset + input * output..offset + (input + 1) * output];
                let mut y = Tensor::zeros(x.batch, x.time, output);
                for r in 0..x.rows() {
                    let xr = &x.data[r * input..(r + 1) * input];
                    let yr = &mut y.data[r * output..(r + 1) * output];
                    for o in 0..output {
                        yr[o] = b[o] + dot(&w[o * input..(o + 1) * input], xr);
                    }
                }
                (y, Cache::None)
            }
            Layer::Conv { input, output, kernel, offset } => {
                let wlen = output * kernel * input;
                let w = &params[offset..offset + wlen];
                let b = &params[offset + wlen..offset + wlen + output];
                let half = (kernel / 2) as isize;
                let mut y = Tensor::zeros(x.batch, x.time, output);
                for bi in 0..x.batch {
                    for t in 0..x.time {
                        let yr = &mut y.data[(bi * x.time + t) * output..(bi * x.time + t + 1) * output];
                        yr.copy_from_slice(b);
                        for j in 0..kernel {
                            let src = t as isize + j as isize - half;
                            if src < 0 || src >= x.time as isize {
                                continue;
                            }
                            let row = bi * x.time + src as usize;
                            let xr = &x.data[row * input..(row + 1) * input];
                            for o in 0..output {
                                let wk = &w[(o * kernel + j) * input..(o * kernel + j + 1) * input];
                                yr[o] += dot(wk, xr);
                            }
                        }
                    }
                }
                (y, Cache::None)
            }
            Layer::BatchNorm { channels, offset, buffer } => {
                let gamma = &params[offset..offset + channels];
                let beta = &params[offset + channels..offset + 2 * channels];
                let rows = x.rows();
                let (mean, var) = match mode {
                    Mode::Train => {
                        let mut mean = vec![0.0; channels];
                        let mut var = vec![0.0; channels];
                        for r in 0..rows {
                            axpy(1.0, &x.data[r * channels..(r + 1) * channels], &mut mean);
                        }
                        mean.iter_mut().for_each(|m| *m /= rows as f64);
                        for r in 0..rows {
                            for c in 0..channels {
                                let d = x.data[r * channels + c] - mean[c];
                                var[c] += d * d;
                            }
                        }
                        var.iter_mut().for_each(|v| *v /= rows as f64);
                        (mean, var)
                    }
                    Mode::Inference => (
                        buffers[buffer..buffer + channels].to_vec(),
                        buffers[buffer + channels..buffer + 2 * channels].to_vec(),
                    ),
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut xhat = vec![0.0; x.data.len()];
                let mut y = Tensor::zeros(x.batch, x.time, channels);
                for r in 0..rows {
                    for c in 0..channels {
                        let i = r * channels + c;
                        xhat[i] = (x.data[i] - mean[c]) * inv_std[c];
                        y.data[i] = gamma[c] * xhat[i] + beta[c];
                    }
                }
                (y, Cache::BatchNorm { xhat, inv_std, mean, var, train: mode == Mode::Train })
            }
            Layer::Act(a) => {
                let data = x.data.iter().map(|&v| a.apply(v)).collect();
                (Tensor::from_data(x.batch, x.time, x.channels, data), Cache::None)
            }
            Layer::Dropout(p) => match mode {
                Mode::Inference => (x.clone(), Cache::None),
                Mode::Train => {
                    let keep = 1.0 / (1.0 - p);
                    let mask: Vec<f64> = (0..x.data.len())
                        .map(|_| if rng.gen::<f64>() >= p { keep } else { 0.0 })
                        .collect();
                    let data = x.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
                    (Tensor::from_data(x.batch, x.time, x.channels, data), Cache::Dropout { mask })
                }
            },
            Layer::Lstm { input, hidden, offset } => lstm_forward(params, x, input, hidden, offset),
            Layer::MeanPool => {
                let mut y = Tensor::zeros(x.batch, 1, x.channels);
                let inv = 1.0 / x.time as f64;
                for bi in 0..x.batch {
                    let yr = &mut y.data[bi * x.channels..(bi + 1) * x.channels];
                    for t in 0..x.time {
                        let row = bi * x.time + t;
                        axpy(inv, &x.data[row * x.channels..(row + 1) * x.channels], yr);
                    }
                }
                (y, Cache::None)
            }
            Layer::LastStep => {
                let mut y = Tensor::zeros(x.batch, 1, x.channels);
                for bi in 0..x.batch {
                    let row = bi * x.time + x.time - 1;
                    y.data[bi * x.channels..(bi + 1) * x.channels]
                        .copy_from_slice(&x.data[row * x.channels..(row + 1) * x.channels]);
                }
                (y, Cache::None)
            }
        }
    }

    /// Returns the gradient with respect to the layer input.
    fn backward(
        &self,
        params: &[f64],
        _buffers: &[f64],
        x: &Tensor,
        cache: &Cache,
        dy: Tensor,
        grads: &mut [f64],
    ) -> Tensor {
        match (self, cache) {
            (Layer::Flatten, _) => dy.reshape(x.time, x.channels),
            (&Layer::Linear { input, output, offset }, _) => {
                let w = &params[offset..offset + input * output];
                let (gw, gb) = grads[offset..offset + (input + 1) * output].split_at_mut(input * output);
                let mut dx = Tensor::zeros(x.batch, x.time, input);
                for r in 0..x.rows() {
                    let xr = &x.data[r * input..(r + 1) * input];
                    let dxr = &mut dx.data[r * input..(r + 1) * input];
                    for o in 0..output {
                        let g = dy.data[r * output + o];
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        axpy(g, xr, &mut gw[o * input..(o + 1) * input]);
                        axpy(g, &w[o * input..(o + 1) * input], dxr);
                    }
                }
                dx
            }
            (&Layer::Conv { input, output, kernel, offset }, _) => {
                let wlen = output * kernel * input;
                let w = &params[offset..offset + wlen];
                let (gw, gb) = grads[offset..offset + wlen + output].split_at_mut(wlen);
                let half = (kernel / 2) as isize;
                let mut dx = Tensor::zeros(x.batch, x.time, input);
                for bi in 0..x.batch {
                    for t in 0..x.time {
                        let dyr = &dy.data[(bi * x.time + t) * output..(bi * x.time + t + 1) * output];
                        for (o, &g) in dyr.iter().enumerate() {
                            gb[o] += g;
                        }
                        for j in 0..kernel {
                            let src = t as isize + j as isize - half;
                            if src < 0 || src >= x.time as isize {
                                continue;
                            }
                            let row = bi * x.time + src as usize;
                            let xr = &x.data[row * input..(row + 1) * input];
                            for (o, &g) in dyr.iter().enumerate() {
                                if g == 0.0 {
                                    continue;
                                }
                                let k = (o * kernel + j) * input;
                                axpy(g, xr, &mut gw[k..k + input]);
                                axpy(g, &w[k..k + input], &mut dx.data[row * input..(row + 1) * input]);
                            }
                        }
                    }
                }
                dx
            }
            (&Layer::BatchNorm { channels, offset, .. }, Cache::BatchNorm { xhat, inv_std, train, .. }) => {
                let gamma = &params[offset..offset + channels];
                let rows = x.rows();
                let mut dgamma = vec![0.0; channels];
                let mut dbeta = vec![0.0; channels];
                for r in 0..rows {
                    for c in 0..channels {
                        let i = r * channels + c;
                        dgamma[c] += dy.data[i] * xhat[i];
                        dbeta[c] += dy.data[i];
                    }
                }
                for c in 0..channels {
                    grads[offset + c] += dgamma[c];
                    grads[offset + channels + c] += dbeta[c];
                }
                let mut dx = Tensor::zeros(x.batch, x.time, channels);
                // train mode also differentiates through the batch mean and variance
                let n = rows as f64;
                for r in 0..rows {
                    for c in 0..channels {
                        let i = r * channels + c;
                        let dxhat = dy.data[i] * gamma[c];
                        dx.data[i] = if *train {
                            inv_std[c] / n * (n * dxhat - gamma[c] * dbeta[c] - xhat[i] * gamma[c] * dgamma[c])
                        } else {
                            dxhat * inv_std[c]
                        };
                    }
                }
                dx
            }
            (&Layer::Act(a), _) => {
                let data = dy.data.iter().zip(&x.data).map(|(g, &v)| g * a.derivative(v)).collect();
                Tensor::from_data(x.batch, x.time, x.channels, data)
            }
            (Layer::Dropout(_), Cache::Dropout { mask }) => {
                let data = dy.data.iter().zip(mask).map(|(g, m)| g * m).collect();
                Tensor::from_data(x.batch, x.time, x.channels, data)
            }
            (Layer::Dropout(_), _) => dy,
            (&Layer::Lstm { input, hidden, offset }, Cache::Lstm { gates, cells }) => {
                lstm_backward(params, x, input, hidden, offset, gates, cells, &dy, grads)
            }
            (Layer::MeanPool, _) => {
                let mut dx = Tensor::zeros(x.batch, x.time, x.channels);
                let inv = 1.0 / x.time as f64;
                for bi in 0..x.batch {
                    let g = &dy.data[bi * x.channels..(bi + 1) * x.channels];
                    for t in 0..x.time {
                        let row = bi * x.time + t;
                        axpy(inv, g, &mut dx.data[row * x.channels..(row + 1) * x.channels]);
                    }
                }
                dx
            }
            (Layer::LastStep, _) => {
                let mut dx = Tensor::zeros(x.batch, x.time, x.channels);
                for bi in 0..x.batch {
                    let row = bi * x.time + x.time - 1;
                    dx.data[row * x.channels..(row + 1) * x.channels]
                        .copy_from_slice(&dy.data[bi * x.channels..(bi + 1) * x.channels]);
                }
                dx
            }
            (layer, _) => unreachable!("cache does not match layer {layer:?}"),
        }
    }
}

fn lstm_forward(params: &[f64], x: &Tensor, input: usize, hidden: usize, offset: usize) -> (Tensor, Cache) {
    let h4 = 4 * hidden;
    let wx = &params[offset..offset + h4 * input];
    let wh = &params[offset + h4 * input..offset + h4 * (input + hidden)];
    let bias = &params[offset + h4 * (input + hidden)..offset + h4 * (input + hidden + 1)];
    let (batch, time) = (x.batch, x.time);
    let mut y = Tensor::zeros(batch, time, hidden);
    let mut gates = vec![0.0; batch * time * h4];
    let mut cells = vec![0.0; batch * time * hidden];
    let mut z = vec![0.0; h4];
    for bi in 0..batch {
        for t in 0..time {
            let row = bi * time + t;
            let xt = &x.data[row * input..(row + 1) * input];
            for k in 0..h4 {
                z[k] = bias[k] + dot(&wx[k * input..(k + 1) * input], xt);
            }
            if t > 0 {
                let hp = &y.data[(row - 1) * hidden..row * hidden];
                for k in 0..h4 {
                    z[k] += dot(&wh[k * hidden..(k + 1) * hidden], hp);
                }
            }
            let g = &mut gates[row * h4..(row + 1) * h4];
            for u in 0..hidden {
                let ig = sigmoid(z[u]);
                let fg = sigmoid(z[hidden + u]);
                let cg = z[2 * hidden + u].tanh();
                let og = sigmoid(z[3 * hidden + u]);
                g[u] = ig;
                g[hidden + u] = fg;
                g[2 * hidden + u] = cg;
                g[3 * hidden + u] = og;
                let c_prev = if t > 0 { cells[(row - 1) * hidden + u] } else { 0.0 };
                let c = fg * c_prev + ig * cg;
                cells[row * hidden + u] = c;
                y.data[row * hidden + u] = og * c.tanh();
            }
        }
    }
    (y, Cache::Lstm { gates, cells })
}

#[allow(clippy::too_many_arguments)]
fn lstm_backward(
    params: &[f64],
    x: &Tensor,
    input: usize,
    hidden: usize,
    offset: usize,
    gates: &[f64],
    cells: &[f64],
    dy: &Tensor,
    grads: &mut [f64],
) -> Tensor {
    let h4 = 4 * hidden;
    let nx = h4 * input;
    let nh = h4 * hidden;
    let wx = &params[offset..offset + nx];
    let wh = &params[offset + nx..offset + nx + nh];
    let (gwx, rest) = grads[offset..offset + nx + nh + h4].split_at_mut(nx);
    let (gwh, gb) = rest.split_at_mut(nh);
    let (batch, time) = (x.batch, x.time);
    let mut dx = Tensor::zeros(batch, time, input);
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dz = vec![0.0; h4];
    let mut hp = vec![0.0; hidden];
    for bi in 0..batch {
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        dc_next.iter_mut().for_each(|v| *v = 0.0);
        for t in (0..time).rev() {
            let row = bi * time + t;
            let g = &gates[row * h4..(row + 1) * h4];
            for u in 0..hidden {
                let (ig, fg, cg, og) = (g[u], g[hidden + u], g[2 * hidden + u], g[3 * hidden + u]);
                let c = cells[row * hidden + u];
                let tc = c.tanh();
                let dh = dy.data[row * hidden + u] + dh_next[u];
                let dc = dh * og * (1.0 - tc * tc) + dc_next[u];
                let c_prev = if t > 0 { cells[(row - 1) * hidden + u] } else { 0.0 };
                dz[u] = dc * cg * ig * (1.0 - ig);
                dz[hidden + u] = dc * c_prev * fg * (1.0 - fg);
                dz[2 * hidden + u] = dc * ig * (1.0 - cg * cg);
                dz[3 * hidden + u] = dh * tc * og * (1.0 - og);
                dc_next[u] = dc * fg;
            }
            let xt = &x.data[row * input..(row + 1) * input];
            let dxt = &mut dx.data[row * input..(row + 1) * input];
            for k in 0..h4 {
                let d = dz[k];
                gb[k] += d;
                axpy(d, xt, &mut gwx[k * input..(k + 1) * input]);
                axpy(d, &wx[k * input..(k + 1) * input], dxt);
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            if t > 0 {
                // h_{t-1} is recomputed from the cached gates and cells
                let pr = row - 1;
                for u in 0..hidden {
                    hp[u] = gates[pr * h4 + 3 * hidden + u] * cells[pr * hidden + u].tanh();
                }
                for k in 0..h4 {
                    axpy(dz[k], &hp, &mut gwh[k * hidden..(k + 1) * hidden]);
                }
                for k in 0..h4 {
                    axpy(dz[k], &wh[k * hidden..(k + 1) * hidden], &mut dh_next);
                }
            }
        }
    }
    dx
}
