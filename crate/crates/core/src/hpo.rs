//! Seeded random search over [`ModelSpec`], ranked by validation PR-AUC.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SampleSet;
use crate::models::train::{train, TrainConfig};
use crate::models::{Activation, Model, ModelKind, ModelSpec};

pub const DEFAULT_TRIALS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    /// Inclusive range of hidden layer counts.
    pub layers: (usize, usize),
    pub widths: Vec<usize>,
    /// Log-uniform bounds.
    pub learning_rate: (f64, f64),
    pub dropout: Vec<f64>,
    pub activation: Vec<Activation>,
    pub batchnorm: Vec<bool>,
    /// Inclusive integer bounds.
    pub batch_size: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            layers: (1, 4),
            widths: (1..=15).map(|i| 16 * i).collect(),
            learning_rate: (1e-5, 3.4e-2),
            dropout: vec![0.0, 0.1, 0.2],
            activation: vec![Activation::Relu, Activation::Softplus],
            batchnorm: vec![true, false],
            batch_size: (32, 2592),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.layers;
        let (lr_lo, lr_hi) = self.learning_rate;
        let (b_lo, b_hi) = self.batch_size;
        if lo == 0 || lo > hi {
            return Err(Error::argument("layer count range must satisfy 1 <= min <= max"));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::argument("widths must be non-empty and positive"));
        }
        if !(lr_lo > 0.0 && lr_lo <= lr_hi && lr_hi.is_finite()) {
            return Err(Error::argument("learning rate bounds must satisfy 0 < min <= max"));
        }
        if self.dropout.is_empty() || self.dropout.iter().any(|d| !(0.0..1.0).contains(d)) {
            return Err(Error::argument("dropout choices must lie in [0, 1)"));
        }
        if self.activation.is_empty() || self.batchnorm.is_empty() {
            return Err(Error::argument("activation and batchnorm choices must be non-empty"));
        }
        if b_lo == 0 || b_lo > b_hi {
            return Err(Error::argument("batch size range must satisfy 1 <= min <= max"));
        }
        Ok(())
    }

    pub fn contains(&self, spec: &ModelSpec) -> bool {
        let (lr_lo, lr_hi) = self.learning_rate;
        let hidden_ok = if spec.kind.is_neural() {
            (self.layers.0..=self.layers.1).contains(&spec.hidden.len())
                && spec.hidden.iter().all(|h| self.widths.contains(h))
        } else {
            spec.hidden.is_empty()
        };
        hidden_ok
            && (lr_lo..=lr_hi).contains(&spec.learning_rate)
            && self.dropout.contains(&spec.dropout)
            && self.activation.contains(&spec.activation)
            && self.batchnorm.contains(&spec.batchnorm)
            && (self.batch_size.0..=self.batch_size.1).contains(&spec.batch_size)
    }

    /// Draw one spec. Every field is drawn for every kind so the stream does
    /// not depend on `kind`; fields a kind ignores are then reset.
    pub fn sample<R: Rng>(&self, kind: ModelKind, rng: &mut R) -> ModelSpec {
        let n_layers = rng.gen_range(self.layers.0..=self.layers.1);
        let hidden: Vec<usize> = (0..n_layers).map(|_| *self.widths.choose(rng).unwrap()).collect();
        let (lo, hi) = self.learning_rate;
        let lr = (rng.gen_range(0.0..=1.0) * (hi.ln() - lo.ln()) + lo.ln()).exp().clamp(lo, hi);
        let dropout = *self.dropout.choose(rng).unwrap();
        let activation = *self.activation.choose(rng).unwrap();
        let batchnorm = *self.batchnorm.choose(rng).unwrap();
        let batch_size = rng.gen_range(self.batch_size.0..=self.batch_size.1);
        let seed = rng.gen::<u64>();
        let mut spec = ModelSpec::new(kind, hidden);
        spec.learning_rate = lr;
        spec.dropout = dropout;
        spec.activation = activation;
        spec.batchnorm = batchnorm;
        spec.batch_size = batch_size;
        spec.seed = seed;
        if !kind.is_neural() {
            spec.dropout = 0.0;
            spec.batchnorm = false;
        }
        spec
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub spec: ModelSpec,
    pub n_params: usize,
    /// `None` when training failed.
    pub val_pr_auc: Option<f64>,
    pub epochs: usize,
    pub best_epoch: usize,
    pub final_train_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub trials: Vec<Trial>,
    /// Trial indices, best first; failed trials last in index order.
    pub ranking: Vec<usize>,
    /// Model trained by the top-ranked trial.
    pub best_model: Model,
}

impl SearchResult {
    pub fn best(&self) -> &Trial {
        &self.trials[self.ranking[0]]
    }

    /// Trial log, one row per trial in index order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "trial", "kind", "hidden", "learning_rate", "dropout", "activation", "batchnorm", "batch_size", "seed",
            "n_params", "epochs", "best_epoch", "val_pr_auc", "final_train_loss", "rank", "error",
        ])?;
        let mut rank = vec![0; self.trials.len()];
        for (r, &i) in self.ranking.iter().enumerate() {
            rank[i] = r + 1;
        }
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.10}")).unwrap_or_default();
        for t in &self.trials {
            let s = &t.spec;
            out.write_record([
                t.index.to_string(),
                s.kind.to_string(),
                format_hidden(&s.hidden),
                format!("{:.6e}", s.learning_rate),
                s.dropout.to_string(),
                s.activation.to_string(),
                s.batchnorm.to_string(),
                s.batch_size.to_string(),
                s.seed.to_string(),
                t.n_params.to_string(),
                t.epochs.to_string(),
                t.best_epoch.to_string(),
                opt(t.val_pr_auc),
                opt(t.final_train_loss),
                rank[t.index].to_string(),
                t.error.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn format_hidden(hidden: &[usize]) -> String {
    hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("-")
}

/// Order by validation PR-AUC descending, then fewer parameters, then index.
pub fn rank(trials: &[Trial]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..trials.len()).collect();
    order.sort_by(|&a, &b| {
        let (ta, tb) = (&trials[a], &trials[b]);
        match (ta.val_pr_auc, tb.val_pr_auc) {
            (Some(x), Some(y)) => y
                .total_cmp(&x)
                .then(ta.n_params.cmp(&tb.n_params))
                .then(ta.index.cmp(&tb.index)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => ta.index.cmp(&tb.index),
        }
    });
    order
}

/// Draw `n_trials` specs from `seed`, train each on `train_set` and rank by
/// PR-AUC on `val_set`. Trials run in parallel; the result does not depend on
/// completion order.
pub fn random_search(
    space: &SearchSpace,
    kind: ModelKind,
    n_trials: usize,
    train_set: &SampleSet,
    val_set: &SampleSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<SearchResult> {
    if n_trials == 0 {
        return Err(Error::argument("n_trials must be >= 1"));
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<ModelSpec> = (0..n_trials).map(|_| space.sample(kind, &mut rng)).collect();
    let outcomes: Vec<(Trial, Option<Model>)> = specs
        .into_par_iter()
        .enumerate()
        .map(|(index, spec)| {
            let n_params = Model::init(&spec, train_set.window, train_set.n_features)
                .map(|m| m.n_params())
                .unwrap_or(0);
            match train(&spec, cfg, train_set, val_set) {
                Ok(out) => (
                    Trial {
                        index,
                        spec,
                        n_params,
                        val_pr_auc: Some(out.best_val_pr_auc),
                        epochs: out.history.len(),
                        best_epoch: out.best_epoch,
                        final_train_loss: out.history.last().map(|h| h.train_loss),
                        error: None,
                    },
                    Some(out.model),
                ),
                Err(e) => (
                    Trial {
                        index,
                        spec,
                        n_params,
                        val_pr_auc: None,
                        epochs: 0,
                        best_epoch: 0,
                        final_train_loss: None,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();
    let (trials, mut models): (Vec<Trial>, Vec<Option<Model>>) = outcomes.into_iter().unzip();
    let ranking = rank(&trials);
    let best = ranking[0];
    let Some(best_model) = models[best].take() else {
        let diagnostics = trials
            .iter()
            .map(|t| format!("trial {}: {}", t.index, t.error.as_deref().unwrap_or("?")))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Search(format!("all {n_trials} trials failed: {diagnostics}")));
    };
    Ok(SearchResult {
        trials,
        ranking,
        best_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::SampleWindow;
    use crate::time::YearMonth;
    use proptest::prelude::*;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = SampleSet::new(2, 2);
        let t = YearMonth::new(2000, 1).unwrap();
        for i in 0..n {
            let label = u8::from(i % 3 == 0);
            let s = if label == 1 { 0.8 } else { 0.2 };
            let features = (0..4).map(|_| s + rng.gen_range(-0.3..0.3)).collect();
            set.push(SampleWindow {
                features,
                label,
                cell: (0, i),
                label_time: t,
            });
        }
        set
    }

    fn small_space() -> SearchSpace {
        SearchSpace {
            layers: (1, 2),
            widths: vec![4, 8],
            learning_rate: (1e-3, 1e-2),
            batch_size: (8, 16),
            ..SearchSpace::default()
        }
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            max_epochs: 4,
            patience: 2,
            epoch_samples: None,
            val_samples: None,
        }
    }

    #[test]
    fn single_trial_ranking() {
        let (tr, va) = (toy(30, 1), toy(30, 2));
        let r = random_search(&small_space(), ModelKind::Dense, 1, &tr, &va, &quick(), 3).unwrap();
        assert_eq!(r.ranking, vec![0]);
        assert_eq!(r.trials.len(), 1);
    }

    #[test]
    fn search_is_deterministic() {
        let (tr, va) = (toy(30, 1), toy(30, 2));
        for kind in ModelKind::ALL {
            let a = random_search(&small_space(), kind, 4, &tr, &va, &quick(), 9).unwrap();
            let b = random_search(&small_space(), kind, 4, &tr, &va, &quick(), 9).unwrap();
            assert_eq!(a.trials, b.trials);
            assert_eq!(a.ranking, b.ranking);
            let top = a.best().val_pr_auc.unwrap();
            assert!(a.trials.iter().all(|t| t.val_pr_auc.unwrap() <= top));
            let mut csv = Vec::new();
            a.write_csv(&mut csv).unwrap();
            assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
        }
    }

    #[test]
    fn all_failed_trials_are_a_search_error() {
        let (tr, va) = (toy(30, 1), toy(30, 2));
        let space = SearchSpace {
            learning_rate: (1e300, 1e300),
            ..small_space()
        };
        let err = random_search(&space, ModelKind::Dense, 2, &tr, &va, &quick(), 0).unwrap_err();
        assert!(matches!(err, Error::Search(ref m) if m.contains("trial 1")), "{err}");
    }

    #[test]
    fn ties_prefer_fewer_parameters_then_index() {
        let mk = |index, auc, n_params| Trial {
            index,
            spec: ModelSpec::new(ModelKind::Svm, vec![]),
            n_params,
            val_pr_auc: auc,
            epochs: 1,
            best_epoch: 0,
            final_train_loss: None,
            error: None,
        };
        let trials = vec![mk(0, Some(0.5), 10), mk(1, None, 1), mk(2, Some(0.7), 50), mk(3, Some(0.5), 5), mk(4, Some(0.5), 5)];
        assert_eq!(rank(&trials), vec![2, 3, 4, 0, 1]);
    }

    #[test]
    fn default_space_covers_reference_lstm() {
        let mut spec = ModelSpec::new(ModelKind::Lstm, vec![16, 32]);
        spec.learning_rate = 1.18e-4;
        spec.dropout = 0.1;
        spec.activation = Activation::Softplus;
        spec.batchnorm = false;
        spec.batch_size = 2208;
        assert!(SearchSpace::default().contains(&spec));
        // extremes of the reference configurations
        for (lr, bs) in [(1.02e-5, 769), (3.36e-2, 2592)] {
            spec.learning_rate = lr;
            spec.batch_size = bs;
            assert!(SearchSpace::default().contains(&spec));
        }
    }

    proptest! {
        #[test]
        fn samples_stay_in_range(seed in any::<u64>(), kind in prop::sample::select(ModelKind::ALL.to_vec())) {
            let space = SearchSpace::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..1000 {
                let spec = space.sample(kind, &mut rng);
                prop_assert!(space.contains(&spec), "{:?}", spec);
                prop_assert!(spec.validate().is_ok());
            }
        }
    }
}
