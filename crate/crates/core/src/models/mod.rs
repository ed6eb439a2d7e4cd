//! The four drought classifiers: linear SVM, dense MLP, 1D CNN and LSTM.
//!
//! All four share one layer graph ([`network`]) with hand-written gradients.
//! Neural kinds are trained on class-weighted binary cross-entropy, the SVM
//! on a class-weighted hinge loss with an L2 penalty.

pub mod gradcheck;
pub mod network;
pub mod spec;
pub mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{Decoder, Encoder, KIND_PARAMS};
use crate::error::{Error, Result};
use crate::features::SampleSet;
pub use network::{Mode, Network, ParamEntry, Tensor};
pub use spec::{class_weights, sigmoid, softplus, Activation, ClassWeights, ModelKind, ModelSpec};

const PREDICT_BATCH: usize = 512;

/// Per-sample loss on a logit (or SVM margin), without the SVM penalty.
///
/// Neural kinds: `w_y * BCE(sigmoid(logit), y)`. SVM: `w_y * max(0, 1 - y·m)`
/// with `y ∈ {-1, +1}`.
pub fn loss(kind: ModelKind, logit: f64, label: u8, weights: &ClassWeights) -> f64 {
    let w = weights.of(label);
    match kind {
        ModelKind::Svm => {
            let y = if label == 1 { 1.0 } else { -1.0 };
            w * (1.0 - y * logit).max(0.0)
        }
        _ => w * (softplus(logit) - label as f64 * logit),
    }
}

/// d loss / d logit.
pub fn loss_derivative(kind: ModelKind, logit: f64, label: u8, weights: &ClassWeights) -> f64 {
    let w = weights.of(label);
    match kind {
        ModelKind::Svm => {
            let y = if label == 1 { 1.0 } else { -1.0 };
            if y * logit < 1.0 {
                -w * y
            } else {
                0.0
            }
        }
        _ => w * (sigmoid(logit) - label as f64),
    }
}

/// Flat parameter vector plus running batchnorm statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub buffers: Vec<f64>,
}

impl ModelParams {
    pub fn is_finite(&self) -> bool {
        self.values.iter().chain(&self.buffers).all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsManifest {
    spec: ModelSpec,
    window: usize,
    n_features: usize,
    params: Vec<ParamEntry>,
    buffers: Vec<ParamEntry>,
}

/// A network together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub network: Network,
    pub params: ModelParams,
}

impl Model {
    /// Freshly initialized from `spec.seed`.
    pub fn init(spec: &ModelSpec, window: usize, n_features: usize) -> Result<Self> {
        let network = Network::new(spec, window, n_features)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (values, buffers) = network.init(&mut rng);
        Ok(Self {
            spec: spec.clone(),
            network,
            params: ModelParams { values, buffers },
        })
    }

    /// All parameters zero (running variance stays 1).
    pub fn zeros(spec: &ModelSpec, window: usize, n_features: usize) -> Result<Self> {
        let mut m = Self::init(spec, window, n_features)?;
        m.params.values.iter_mut().for_each(|v| *v = 0.0);
        Ok(m)
    }

    pub fn n_params(&self) -> usize {
        self.network.n_params
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.network.manifest.iter().find(|e| e.name == name)
    }

    pub fn param_slice_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let e = self.entry(name)?.clone();
        Some(&mut self.params.values[e.offset..e.offset + e.len()])
    }

    /// Inference-mode logit (SVM: margin) for one flattened window.
    pub fn forward(&self, window: &[f64]) -> Result<f64> {
        Ok(self.logits_for(&[window])?[0])
    }

    /// Inference-mode logits for a batch of flattened windows.
    pub fn logits_for(&self, windows: &[&[f64]]) -> Result<Vec<f64>> {
        let input = self.network.input_tensor(windows)?;
        // inference never draws from the rng
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tape = self
            .network
            .forward(&self.params.values, &self.params.buffers, input, Mode::Inference, &mut rng);
        let out = tape.output.data;
        if let Some(v) = out.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite model output {v}")));
        }
        Ok(out)
    }

    /// Logits for every sample of a set, in order.
    pub fn predict(&self, set: &SampleSet) -> Result<Vec<f64>> {
        if set.window != self.network.window || set.n_features != self.network.n_features {
            return Err(Error::argument(format!(
                "sample shape {}x{} does not match model input {}x{}",
                set.window, set.n_features, self.network.window, self.network.n_features
            )));
        }
        let mut out = Vec::with_capacity(set.len());
        let mut start = 0;
        while start < set.len() {
            let end = (start + PREDICT_BATCH).min(set.len());
            let windows: Vec<&[f64]> = (start..end).map(|i| set.features(i)).collect();
            out.extend(self.logits_for(&windows)?);
            start = end;
        }
        Ok(out)
    }

    /// Mean weighted batch loss (plus the SVM penalty) and its gradient.
    pub fn objective_and_gradient(
        &self,
        windows: &[&[f64]],
        labels: &[u8],
        weights: &ClassWeights,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<f64>, network::Tape)> {
        let input = self.network.input_tensor(windows)?;
        let tape = self
            .network
            .forward(&self.params.values, &self.params.buffers, input, mode, rng);
        let n = windows.len() as f64;
        let kind = self.spec.kind;
        let logits = tape.logits();
        let mut total = 0.0;
        let mut d_logits = Vec::with_capacity(logits.len());
        for (&z, &y) in logits.iter().zip(labels) {
            total += loss(kind, z, y, weights);
            d_logits.push(loss_derivative(kind, z, y, weights) / n);
        }
        let mut grads = vec![0.0; self.network.n_params];
        self.network
            .backward(&self.params.values, &self.params.buffers, &tape, &d_logits, &mut grads);
        let mut objective = total / n;
        if kind == ModelKind::Svm {
            let (w, g) = self.svm_weights(&mut grads);
            objective += self.spec.l2 * w.iter().map(|v| v * v).sum::<f64>();
            for (gi, wi) in g.iter_mut().zip(w) {
                *gi += 2.0 * self.spec.l2 * wi;
            }
        }
        Ok((objective, grads, tape))
    }

    fn svm_weights<'a>(&'a self, grads: &'a mut [f64]) -> (&'a [f64], &'a mut [f64]) {
        let e = &self.network.manifest[0];
        (
            &self.params.values[e.offset..e.offset + e.len()],
            &mut grads[e.offset..e.offset + e.len()],
        )
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let manifest = ParamsManifest {
            spec: self.spec.clone(),
            window: self.network.window,
            n_features: self.network.n_features,
            params: self.network.manifest.clone(),
            buffers: self.network.buffer_manifest.clone(),
        };
        let mut enc = Encoder::new(w);
        enc.header(KIND_PARAMS)?;
        enc.str(&serde_json::to_string(&manifest)?)?;
        enc.u64(self.params.values.len())?;
        enc.f64s(&self.params.values)?;
        enc.u64(self.params.buffers.len())?;
        enc.f64s(&self.params.buffers)?;
        enc.finish()
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut dec = Decoder::new(r);
        dec.header(KIND_PARAMS)?;
        let manifest: ParamsManifest = serde_json::from_str(&dec.str()?)?;
        let network = Network::new(&manifest.spec, manifest.window, manifest.n_features)?;
        if network.manifest != manifest.params || network.buffer_manifest != manifest.buffers {
            return Err(Error::Format("parameter manifest does not match the model spec".into()));
        }
        let n = dec.u64()?;
        if n != network.n_params {
            return Err(Error::Format(format!("{n} parameters, expected {}", network.n_params)));
        }
        let values = dec.f64s(n)?;
        let nb = dec.u64()?;
        if nb != network.n_buffers {
            return Err(Error::Format(format!("{nb} buffers, expected {}", network.n_buffers)));
        }
        let buffers = dec.f64s(nb)?;
        dec.finish()?;
        Ok(Self {
            spec: manifest.spec,
            network,
            params: ModelParams { values, buffers },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
