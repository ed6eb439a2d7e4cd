use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::DEFAULT_WINDOW;
use crate::geogrid::DEFAULT_SMI_THRESHOLD;
use crate::hpo::{SearchSpace, DEFAULT_TRIALS};
use crate::models::train::TrainConfig;
use crate::models::ModelKind;
use crate::splits::DEFAULT_K;
use crate::synthdata::SynthConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SynthConfig),
    /// A grid container written by `save_grid`.
    Container { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthConfig::default())
    }
}

/// Everything a run depends on. Parsed from TOML; every field is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub window: usize,
    pub k: usize,
    pub threshold: f64,
    pub kinds: Vec<ModelKind>,
    /// HPO trials per (kind, split).
    pub trials: usize,
    pub seeds: Vec<u64>,
    pub factors: Vec<usize>,
    /// 1-based splits to run; all when empty.
    pub splits: Vec<usize>,
    /// Split whose test fold the ablation evaluates; the last run split when unset.
    pub ablation_split: Option<usize>,
    pub drop_straddling: bool,
    pub search_seed: u64,
    pub max_lag: usize,
    pub data: DataSource,
    pub train: TrainConfig,
    pub search: SearchSpace,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/default"),
            window: DEFAULT_WINDOW,
            k: DEFAULT_K,
            threshold: DEFAULT_SMI_THRESHOLD,
            kinds: ModelKind::ALL.to_vec(),
            trials: DEFAULT_TRIALS,
            seeds: (0..5).collect(),
            factors: (1..=10).collect(),
            splits: Vec::new(),
            ablation_split: None,
            drop_straddling: false,
            search_seed: 2024,
            max_lag: 24,
            data: DataSource::default(),
            train: TrainConfig::default(),
            search: SearchSpace::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.window < 1 {
            return bad("window must be >= 1");
        }
        if self.k < 3 {
            return bad("k must be >= 3 for at least one split");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if self.kinds.is_empty() || self.kinds.iter().collect::<HashSet<_>>().len() != self.kinds.len() {
            return bad("kinds must be non-empty and distinct");
        }
        if self.trials < 1 {
            return bad("trials must be >= 1");
        }
        if self.seeds.is_empty() || self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be non-empty and distinct");
        }
        if self.factors.contains(&0) || self.factors.windows(2).any(|w| w[0] >= w[1]) {
            return bad("factors must be positive and strictly ascending");
        }
        let n_splits = self.k - 2;
        if self.splits.iter().any(|&s| s == 0 || s > n_splits) {
            return bad("splits must lie in 1..=k-2");
        }
        if let Some(s) = self.ablation_split {
            if !self.run_splits().contains(&s) {
                return bad("ablation_split must be one of the run splits");
            }
        }
        if self.train.max_epochs == 0 {
            return bad("train.max_epochs must be >= 1");
        }
        self.search.validate()
    }

    pub fn run_splits(&self) -> Vec<usize> {
        if self.splits.is_empty() {
            (1..=self.k - 2).collect()
        } else {
            let mut s = self.splits.clone();
            s.sort_unstable();
            s.dedup();
            s
        }
    }

    pub fn ablation_split(&self) -> usize {
        self.ablation_split.unwrap_or_else(|| *self.run_splits().last().expect("k >= 3"))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.run_splits(), vec![1, 2, 3]);
        assert_eq!(cfg.ablation_split(), 3);
        assert_eq!(cfg.seeds.len(), 5);
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let text = r#"
            output_dir = "out"
            kinds = ["lstm", "svm"]
            seeds = [3, 1]
            factors = [1, 2, 4]
            [data]
            source = "synthetic"
            n_lat = 10
            [data.params]
            seed = 5
            [train]
            max_epochs = 7
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.kinds, vec![ModelKind::Lstm, ModelKind::Svm]);
        assert_eq!(cfg.train.patience, 10);
        match &cfg.data {
            DataSource::Synthetic(s) => assert_eq!((s.n_lat, s.n_lon, s.params.seed), (10, 20, 5)),
            other => panic!("{other:?}"),
        }
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(cfg.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn container_source() {
        let cfg = ExperimentConfig::from_toml("[data]\nsource = \"container\"\npath = \"g.arid\"").unwrap();
        assert_eq!(cfg.data, DataSource::Container { path: "g.arid".into() });
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "seeds = [1, 1]",
            "factors = [2, 1]",
            "window = 0",
            "kinds = []",
            "splits = [4]",
            "ablation_split = 2\nsplits = [1]",
            "unknown_key = 1",
            "threshold = 1.5",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }
}
