//! Agricultural drought classification on gridded monthly climate data.
//!
//! The pipeline: a masked [`GridSeries`] with an SMI target is labeled by
//! threshold, cut into trailing feature windows, split into contiguous
//! temporal folds, and used to train four classifier families whose
//! predictions are scored with PR-AUC and macro F1. [`runner`] ties the
//! stages together and adds the grid-coarsening ablation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod container;
pub mod error;
pub mod features;
pub mod geogrid;
pub mod hpo;
pub mod metrics;
pub mod models;
pub mod runner;
pub mod splits;
pub mod synthdata;
pub mod time;

pub use container::{load_grid, read_grid, save_grid, write_grid};
pub use error::{Error, Result};
pub use features::{
    build_windows, fit_normalization, seasonal_encoding, NormalizationStats, SampleSet, SampleWindow, WindowConfig,
};
pub use geogrid::{
    binarize_smi, classify_smi, coarsen, coarsen_with, CoarseLabelRule, DroughtClass, GridGeometry, GridSeries, Raster,
};
pub use hpo::{random_search, SearchResult, SearchSpace, Trial};
pub use metrics::{macro_f1, pr_auc, pr_curve, spearman, spearman_lag, Confusion, ScoredPredictions};
pub use models::gradcheck::grad_check;
pub use models::train::{train, TrainConfig, TrainedModel};
pub use models::{class_weights, loss, ClassWeights, Model, ModelKind, ModelSpec};
pub use runner::{run_all, EvalReport, ExperimentConfig};
pub use splits::{make_fold_plan, partition, FoldPlan};
pub use synthdata::{derive_smi, simulate, BucketParams, SynthConfig};
pub use time::{MonthRange, YearMonth};
