use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{class_weights, ClassWeights, Mode, Model, ModelKind, ModelSpec};
use crate::error::{Error, Result};
use crate::features::SampleSet;
use crate::metrics::{pr_auc, ScoredPredictions};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Epoch budget and early stopping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without a validation PR-AUC improvement before stopping.
    pub patience: usize,
    /// Neural kinds draw at most this many training samples per epoch
    /// (without replacement); the SVM always passes over the full set.
    pub epoch_samples: Option<usize>,
    /// Score early stopping on a fixed seeded subset of this many validation
    /// samples instead of the whole set.
    pub val_samples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            patience: 10,
            epoch_samples: None,
            val_samples: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_pr_auc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    /// Parameters of the best validation epoch.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_pr_auc: f64,
    pub weights: ClassWeights,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, lr: f64, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Pegasos-style projected subgradient descent with iterate averaging.
struct Pegasos {
    lambda: f64,
    t: f64,
    n_weights: usize,
    average: Vec<f64>,
}

impl Pegasos {
    fn new(l2: f64, n_weights: usize, n: usize) -> Self {
        Self {
            // objective λ‖w‖² has strong convexity 2λ
            lambda: 2.0 * l2,
            t: 0.0,
            n_weights,
            average: vec![0.0; n],
        }
    }

    /// `grads` holds the data term only.
    fn step(&mut self, lr: f64, params: &mut [f64], grads: &[f64]) {
        self.t += 1.0;
        let eta = lr / (1.0 + lr * self.lambda * self.t);
        let (w, b) = params.split_at_mut(self.n_weights);
        let shrink = 1.0 - eta * self.lambda;
        for (wi, gi) in w.iter_mut().zip(grads) {
            *wi = shrink * *wi - eta * gi;
        }
        for (bi, gi) in b.iter_mut().zip(&grads[self.n_weights..]) {
            *bi -= eta * gi;
        }
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let radius = 1.0 / self.lambda.sqrt();
        if norm > radius {
            let s = radius / norm;
            w.iter_mut().for_each(|v| *v *= s);
        }
        let k = 1.0 / self.t;
        for (a, p) in self.average.iter_mut().zip(params.iter()) {
            *a += (p - *a) * k;
        }
    }
}

fn validation_pr_auc(model: &Model, val: &SampleSet) -> Result<f64> {
    let scores = model.predict(val)?;
    pr_auc(&ScoredPredictions::new(scores, val.labels.clone())?)
}

/// Fit `spec` on `train`, early-stopping on the PR-AUC of `val`.
///
/// Everything random (initialization, shuffling, dropout, epoch subsets) is
/// drawn from one stream seeded by `spec.seed`, so identical inputs give
/// bit-identical histories.
pub fn train(spec: &ModelSpec, cfg: &TrainConfig, train: &SampleSet, val: &SampleSet) -> Result<TrainedModel> {
    spec.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::data("training and validation sets must be non-empty"));
    }
    if cfg.max_epochs == 0 {
        return Err(Error::argument("max_epochs must be >= 1"));
    }
    let weights = class_weights(&train.labels)?;
    let mut model = Model::init(spec, train.window, train.n_features)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let val_subset;
    let val = match cfg.val_samples {
        Some(m) if m < val.len() => {
            let mut pick_rng = ChaCha8Rng::seed_from_u64(spec.seed);
            pick_rng.set_stream(2);
            let mut idx = rand::seq::index::sample(&mut pick_rng, val.len(), m.max(1)).into_vec();
            idx.sort_unstable();
            val_subset = val.subset(&idx);
            &val_subset
        }
        _ => val,
    };
    let n_params = model.n_params();
    let mut adam = Adam::new(n_params);
    let mut pegasos = Pegasos::new(spec.l2, model.network.manifest[0].len(), n_params);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let per_epoch = match cfg.epoch_samples {
        Some(m) if spec.kind.is_neural() => m.clamp(1, train.len()),
        _ => train.len(),
    };
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stale = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order[..per_epoch].chunks(spec.batch_size) {
            let windows: Vec<&[f64]> = chunk.iter().map(|&i| train.features(i)).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (objective, mut grads, tape) =
                model.objective_and_gradient(&windows, &labels, &weights, Mode::Train, &mut rng)?;
            if !objective.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("non-finite loss {objective}"),
                });
            }
            total += objective;
            batches += 1;
            if spec.kind == ModelKind::Svm {
                // the penalty is handled by the shrink step
                let n_w = pegasos.n_weights;
                let w = &model.params.values[..n_w];
                for (g, wi) in grads[..n_w].iter_mut().zip(w) {
                    *g -= 2.0 * spec.l2 * wi;
                }
                pegasos.step(spec.learning_rate, &mut model.params.values, &grads);
            } else {
                adam.step(spec.learning_rate, &mut model.params.values, &grads);
                model.network.update_running_stats(&tape, &mut model.params.buffers);
            }
        }
        let train_loss = total / batches as f64;

        let candidate = if spec.kind == ModelKind::Svm {
            let mut averaged = model.clone();
            averaged.params.values.clone_from(&pegasos.average);
            averaged
        } else {
            model.clone()
        };
        if !candidate.params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite parameters".into(),
            });
        }
        let val_pr_auc = match validation_pr_auc(&candidate, val) {
            Ok(v) => v,
            Err(Error::Numeric(reason)) => return Err(Error::Diverged { epoch, reason }),
            Err(e) => return Err(e),
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_pr_auc,
        });
        let improved = best.as_ref().is_none_or(|(b, _, _)| val_pr_auc > *b);
        if improved {
            best = Some((val_pr_auc, epoch, candidate));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (best_val_pr_auc, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainedModel {
        model,
        history,
        best_epoch,
        best_val_pr_auc,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::SampleWindow;
    use crate::time::YearMonth;
    use rand::Rng;

    const W: usize = 2;
    const F: usize = 3;

    /// One informative feature, constant in time, two classes at ±1.
    fn separable(n: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = SampleSet::new(W, F);
        let t = YearMonth::new(2000, 1).unwrap();
        for i in 0..n {
            let label = (i % 2) as u8;
            let signal = if label == 1 { 1.0 } else { -1.0 };
            let mut x = Vec::with_capacity(W * F);
            for _ in 0..W {
                x.push(signal);
                for _ in 1..F {
                    x.push(rng.gen_range(-0.1..0.1));
                }
            }
            set.push(SampleWindow {
                features: x,
                label,
                cell: (0, i),
                label_time: t,
            });
        }
        set
    }

    fn spec(kind: ModelKind) -> ModelSpec {
        let mut s = ModelSpec::new(kind, vec![8]);
        s.learning_rate = 1e-2;
        s.batch_size = 8;
        s.seed = 11;
        s
    }

    #[test]
    fn separable_set_is_learned_by_every_kind() {
        let set = separable(40, 1);
        for kind in ModelKind::ALL {
            let out = train(&spec(kind), &TrainConfig::default(), &set, &set).unwrap();
            assert_eq!(out.best_val_pr_auc, 1.0, "{kind}");
            assert!(out.history.len() <= 100);
        }
    }

    #[test]
    fn identical_seed_gives_identical_history() {
        let set = separable(40, 2);
        for kind in ModelKind::ALL {
            let mut s = spec(kind);
            s.dropout = 0.1;
            s.batchnorm = kind.is_neural();
            let cfg = TrainConfig {
                max_epochs: 5,
                patience: 5,
                epoch_samples: Some(24),
                val_samples: Some(20),
            };
            let a = train(&s, &cfg, &set, &set).unwrap();
            let b = train(&s, &cfg, &set, &set).unwrap();
            let bits = |h: &[EpochRecord]| h.iter().map(|r| (r.train_loss.to_bits(), r.val_pr_auc.to_bits())).collect::<Vec<_>>();
            assert_eq!(bits(&a.history), bits(&b.history));
            assert_eq!(a.model, b.model);
        }
    }

    #[test]
    fn early_stopping_respects_patience() {
        let set = separable(40, 3);
        let cfg = TrainConfig {
            max_epochs: 100,
            patience: 3,
            epoch_samples: None,
            val_samples: None,
        };
        let out = train(&spec(ModelKind::Dense), &cfg, &set, &set).unwrap();
        // perfect validation cannot improve further
        assert!(out.history.len() <= out.best_epoch + 1 + 3);
    }

    #[test]
    fn divergence_reports_epoch() {
        let set = separable(40, 4);
        let mut s = spec(ModelKind::Dense);
        s.learning_rate = 1e300;
        let err = train(&s, &TrainConfig::default(), &set, &set).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn single_class_training_set_is_rejected() {
        let mut set = SampleSet::new(W, F);
        let t = YearMonth::new(2000, 1).unwrap();
        set.push(SampleWindow {
            features: vec![0.0; W * F],
            label: 0,
            cell: (0, 0),
            label_time: t,
        });
        assert!(matches!(
            train(&spec(ModelKind::Svm), &TrainConfig::default(), &set, &set),
            Err(Error::Data(_))
        ));
    }
}
