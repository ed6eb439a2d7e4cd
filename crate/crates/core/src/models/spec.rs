use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Svm,
    Dense,
    Cnn,
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Svm, ModelKind::Dense, ModelKind::Cnn, ModelKind::Lstm];

    pub fn is_neural(self) -> bool {
        self != ModelKind::Svm
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Svm => "svm",
            ModelKind::Dense => "dense",
            ModelKind::Cnn => "cnn",
            ModelKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "svm" => Ok(ModelKind::Svm),
            "dense" => Ok(ModelKind::Dense),
            "cnn" => Ok(ModelKind::Cnn),
            "lstm" => Ok(ModelKind::Lstm),
            _ => Err(Error::argument(format!("unknown model kind {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
        })
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn default_l2() -> f64 {
    1e-4
}

fn default_kernel() -> usize {
    3
}

/// Architecture and training hyperparameters of one classifier.
///
/// `activation` is ignored by `svm` and `lstm` (the LSTM cell keeps its
/// sigmoid gates and tanh candidate); `hidden` is ignored by `svm`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub dropout: f64,
    pub activation: Activation,
    pub batchnorm: bool,
    pub batch_size: usize,
    pub seed: u64,
    /// L2 penalty of the SVM hinge objective.
    #[serde(default = "default_l2")]
    pub l2: f64,
    /// Temporal kernel width of the CNN.
    #[serde(default = "default_kernel")]
    pub kernel: usize,
}

impl ModelSpec {
    /// A reasonable starting spec for `kind`.
    pub fn new(kind: ModelKind, hidden: Vec<usize>) -> Self {
        Self {
            kind,
            hidden: if kind.is_neural() { hidden } else { Vec::new() },
            learning_rate: 1e-3,
            dropout: 0.0,
            activation: Activation::Relu,
            batchnorm: false,
            batch_size: 64,
            seed: 0,
            l2: default_l2(),
            kernel: default_kernel(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_neural() && self.hidden.is_empty() {
            return Err(Error::argument(format!("{} needs at least one hidden layer", self.kind)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::argument("hidden widths must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::argument("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::argument("dropout must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::argument("batch size must be >= 1"));
        }
        if self.kind == ModelKind::Svm && !(self.l2 > 0.0) {
            return Err(Error::argument("svm l2 penalty must be positive"));
        }
        if self.kind == ModelKind::Cnn && self.kernel.is_multiple_of(2) {
            return Err(Error::argument("cnn kernel width must be odd for same padding"));
        }
        Ok(())
    }
}

/// Per-class loss multipliers `w_c = N / (2 N_c)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w_pos: f64,
    pub w_neg: f64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights { w_pos: 1.0, w_neg: 1.0 };

    #[inline]
    pub fn of(&self, label: u8) -> f64 {
        if label == 1 {
            self.w_pos
        } else {
            self.w_neg
        }
    }
}

pub fn class_weights(labels: &[u8]) -> Result<ClassWeights> {
    let n = labels.len();
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::data("class weights need both classes present"));
    }
    Ok(ClassWeights {
        w_pos: n as f64 / (2.0 * pos as f64),
        w_neg: n as f64 / (2.0 * neg as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_weight_examples() {
        let mut labels = vec![0u8; 10];
        labels[0] = 1;
        labels[1] = 1;
        let w = class_weights(&labels).unwrap();
        assert_eq!((w.w_pos, w.w_neg), (2.5, 0.625));
        let w = class_weights(&[1, 1, 1, 1, 1, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!((w.w_pos, w.w_neg), (1.0, 1.0));
        let mut labels = vec![0u8; 100];
        labels[..18].iter_mut().for_each(|l| *l = 1);
        let w = class_weights(&labels).unwrap();
        assert!((w.w_pos / w.w_neg - 0.82 / 0.18).abs() < 1e-12);
        assert!(class_weights(&[0, 0]).is_err());
        // weights sum to N over the samples
        let total: f64 = labels.iter().map(|&l| w.of(l)).sum();
        assert!((total - 100.0).abs() < 1e-9);
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::new(ModelKind::Dense, vec![]).validate().is_err());
        assert!(ModelSpec::new(ModelKind::Svm, vec![]).validate().is_ok());
        let mut s = ModelSpec::new(ModelKind::Lstm, vec![8]);
        s.learning_rate = 0.0;
        assert!(s.validate().is_err());
        assert_eq!("LSTM".parse::<ModelKind>().unwrap(), ModelKind::Lstm);
    }

    #[test]
    fn stable_nonlinearities() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
