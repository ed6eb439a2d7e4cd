//! End-to-end experiment orchestration: data, folds, search, retraining over
//! seeds, test evaluation, resolution ablation and lag correlations.
//!
//! Every table is written as CSV into the configured output directory. Run
//! metadata that legitimately differs between runs (timestamps) lives only in
//! `manifest.json`, so the CSV bodies of two runs with the same config are
//! byte-identical.

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;

pub use config::{DataSource, ExperimentConfig};
pub use report::{AblationRow, AblationTrend, ClassStatRow, EvalReport, ResultRow, Scores, Status, SummaryRow};

use crate::container::load_grid;
use crate::error::{Error, Result};
use crate::features::{build_windows, fit_normalization, NormalizationStats, SampleSet, WindowConfig};
use crate::geogrid::{coarsen, GridSeries};
use crate::hpo::random_search;
use crate::metrics::{aggregate_lags, pr_auc, spearman, spearman_lag, Confusion, LagCorrelation, ScoredPredictions};
use crate::models::train::train;
use crate::models::{Model, ModelKind};
use crate::splits::{class_stats, make_fold_plan, partition, FoldPlan};

pub type ModelKey = (ModelKind, u64);

/// Models of the ablation split plus what is needed to re-featurize.
#[derive(Clone, Debug)]
pub struct TrainedSet {
    pub split: usize,
    pub stats: NormalizationStats,
    pub models: BTreeMap<ModelKey, Model>,
}

pub fn load_data(config: &ExperimentConfig) -> Result<GridSeries> {
    match &config.data {
        DataSource::Synthetic(s) => s.generate(),
        DataSource::Container { path } => load_grid(path),
    }
}

pub fn fold_plan(config: &ExperimentConfig, grid: &GridSeries) -> Result<FoldPlan> {
    make_fold_plan(&grid.timestamps(), config.k)
}

fn window_config(config: &ExperimentConfig, plan: &FoldPlan, split: usize) -> Result<WindowConfig> {
    Ok(WindowConfig {
        window: config.window,
        threshold: config.threshold,
        label_range: Some(plan.used_range(split)?),
        ..WindowConfig::default()
    })
}

/// PR-AUC and macro F1 (positive when the logit is >= 0) on `set`.
pub fn evaluate(model: &Model, set: &SampleSet) -> Result<Scores> {
    let scores = model.predict(set)?;
    let p = ScoredPredictions::new(scores, set.labels.clone())?;
    let confusion = Confusion::at_threshold(&p, 0.0);
    Ok(Scores {
        pr_auc: pr_auc(&p)?,
        macro_f1: confusion.macro_f1(),
        confusion,
        positive_frequency: p.positive_frequency(),
        n: p.len(),
    })
}

fn search_seed(config: &ExperimentConfig, kind: ModelKind, split: usize) -> u64 {
    let k = ModelKind::ALL.iter().position(|&x| x == kind).unwrap() as u64;
    config.search_seed.wrapping_add(100 * split as u64 + k)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn model_path(dir: &Path, kind: ModelKind, split: usize, seed: u64) -> PathBuf {
    dir.join("models").join(format!("{kind}_split{split}_seed{seed}.arid"))
}

/// Per-fold and overall label frequency over all valid cell-months.
pub fn label_stats(grid: &GridSeries, plan: &FoldPlan, threshold: f64) -> Result<Vec<ClassStatRow>> {
    let mut labels = Vec::new();
    for t in 0..grid.n_time() {
        for j in 0..grid.n_lon() {
            for i in 0..grid.n_lat() {
                if grid.is_valid(i, j, t) {
                    labels.push((grid.timestamp(t), grid.label_at(i, j, t, threshold)?));
                }
            }
        }
    }
    let per_fold = class_stats(labels.iter().copied(), plan)?;
    let total = labels.len();
    let pos = labels.iter().filter(|(_, l)| *l == 1).count();
    let range = plan.time_range();
    let mut rows = vec![ClassStatRow {
        fold: None,
        start: range.start.to_string(),
        end: range.end.to_string(),
        positive_frequency: (total > 0).then(|| pos as f64 / total as f64),
    }];
    rows.extend(plan.folds.iter().zip(per_fold).map(|(f, freq)| ClassStatRow {
        fold: Some(f.index),
        start: f.start.to_string(),
        end: f.end.to_string(),
        positive_frequency: freq,
    }));
    Ok(rows)
}

/// Trained model, epochs run and test scores for one seed.
type SeedRun = (u64, Result<(Model, usize, Scores)>);

/// Search, retrain over seeds and evaluate on the test fold for every
/// configured `(kind, split)`. Failures are recorded per row; only setup
/// errors (data, folds, output directory) abort.
pub fn run_experiment(
    config: &ExperimentConfig,
    grid: &GridSeries,
    plan: &FoldPlan,
) -> Result<(Vec<ResultRow>, TrainedSet)> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir.join("models"))?;
    let ablation_split = config.ablation_split();
    let mut rows = Vec::new();
    let mut kept = None;
    for split in config.run_splits() {
        let test_fold = plan.split(split)?.test;
        let stats = fit_normalization(grid, plan.train_range(split)?)?;
        let wcfg = window_config(config, plan, split)?;
        let samples = SampleSet::collect(build_windows(grid, &stats, &wcfg)?);
        let idx = partition(&samples, plan, split, config.drop_straddling)?;
        let (train_set, val_set, test_set) =
            (samples.subset(&idx.train), samples.subset(&idx.val), samples.subset(&idx.test));
        drop(samples);
        log::info!(
            "split {split}: {} train / {} val / {} test samples",
            train_set.len(),
            val_set.len(),
            test_set.len()
        );
        let mut models = BTreeMap::new();
        for &kind in &config.kinds {
            let failed = |msg: String| {
                config
                    .seeds
                    .iter()
                    .map(|&seed| ResultRow {
                        kind,
                        split,
                        test_fold,
                        seed,
                        status: Status::Failed(msg.clone()),
                        scores: None,
                        epochs: 0,
                    })
                    .collect::<Vec<_>>()
            };
            let search = match random_search(
                &config.search,
                kind,
                config.trials,
                &train_set,
                &val_set,
                &config.train,
                search_seed(config, kind, split),
            ) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("{kind} split {split}: search failed: {e}");
                    rows.extend(failed(format!("search: {e}")));
                    continue;
                }
            };
            search.write_csv(create(dir, &format!("hpo_trials_{kind}_split{split}.csv"))?)?;
            let best = search.best().spec.clone();
            write_json(dir, &format!("best_spec_{kind}_split{split}.json"), &best)?;
            log::info!("{kind} split {split}: best val PR-AUC {:?}", search.best().val_pr_auc);

            let runs: Vec<SeedRun> = config
                .seeds
                .par_iter()
                .map(|&seed| {
                    let mut spec = best.clone();
                    spec.seed = seed;
                    let out = train(&spec, &config.train, &train_set, &val_set).and_then(|t| {
                        let scores = evaluate(&t.model, &test_set)?;
                        Ok((t.model, t.history.len(), scores))
                    });
                    (seed, out)
                })
                .collect();
            for (seed, out) in runs {
                match out {
                    Ok((model, epochs, scores)) => {
                        model.save(model_path(dir, kind, split, seed))?;
                        rows.push(ResultRow {
                            kind,
                            split,
                            test_fold,
                            seed,
                            status: Status::Ok,
                            scores: Some(scores),
                            epochs,
                        });
                        if split == ablation_split {
                            models.insert((kind, seed), model);
                        }
                    }
                    Err(e) => {
                        log::warn!("{kind} split {split} seed {seed}: {e}");
                        rows.push(ResultRow {
                            kind,
                            split,
                            test_fold,
                            seed,
                            status: Status::Failed(e.to_string()),
                            scores: None,
                            epochs: 0,
                        });
                    }
                }
            }
        }
        if split == ablation_split {
            write_json(dir, &format!("norm_stats_split{split}.json"), &stats)?;
            kept = Some(TrainedSet { split, stats, models });
        }
    }
    let kept = kept.expect("ablation split is one of the run splits");
    report::write_results_csv(&rows, create(dir, "results.csv")?)?;
    report::write_summary_csv(&report::summarize(&rows), create(dir, "summary.csv")?)?;
    Ok((rows, kept))
}

/// Reload the models and statistics a previous [`run_experiment`] saved.
pub fn load_trained(config: &ExperimentConfig) -> Result<TrainedSet> {
    let dir = &config.output_dir;
    let split = config.ablation_split();
    let stats_path = dir.join(format!("norm_stats_split{split}.json"));
    let stats: NormalizationStats = serde_json::from_str(&fs::read_to_string(&stats_path).map_err(|e| {
        Error::Config(format!("{}: {e} (run `train` first)", stats_path.display()))
    })?)?;
    let mut models = BTreeMap::new();
    for &kind in &config.kinds {
        for &seed in &config.seeds {
            let path = model_path(dir, kind, split, seed);
            if path.exists() {
                models.insert((kind, seed), Model::load(path)?);
            }
        }
    }
    Ok(TrainedSet { split, stats, models })
}

/// Evaluate the trained models on coarsened copies of the grid, reusing the
/// fine-grid normalization. Factors beyond the grid extent yield skipped rows.
pub fn run_ablation(
    config: &ExperimentConfig,
    grid: &GridSeries,
    plan: &FoldPlan,
    trained: &TrainedSet,
) -> Result<(Vec<AblationRow>, Vec<AblationTrend>)> {
    let split = trained.split;
    let wcfg = window_config(config, plan, split)?;
    let mut rows = Vec::new();
    for &factor in &config.factors {
        let test_set = (|| -> Result<SampleSet> {
            let coarse = coarsen(grid, factor)?;
            let samples = SampleSet::collect(build_windows(&coarse, &trained.stats, &wcfg)?);
            let idx = partition(&samples, plan, split, config.drop_straddling)?;
            Ok(samples.subset(&idx.test))
        })();
        let status_for_setup = |e: &Error| match e {
            Error::Argument(m) if factor > grid.n_lat() || factor > grid.n_lon() => Status::Skipped(m.clone()),
            other => Status::Failed(other.to_string()),
        };
        let evaluated: Vec<AblationRow> = trained
            .models
            .par_iter()
            .map(|(&(kind, seed), model)| {
                let (status, scores) = match &test_set {
                    Err(e) => (status_for_setup(e), None),
                    Ok(set) => match evaluate(model, set) {
                        Ok(s) => (Status::Ok, Some(s)),
                        Err(e) => (Status::Failed(e.to_string()), None),
                    },
                };
                AblationRow {
                    kind,
                    factor,
                    seed,
                    status,
                    scores,
                }
            })
            .collect();
        if let Err(e) = &test_set {
            log::warn!("factor {factor}: {e}");
        }
        rows.extend(evaluated);
    }
    let trend = ablation_trend(config, &rows);
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    report::write_ablation_csv(&rows, create(dir, "ablation.csv")?)?;
    report::write_trend_csv(&trend, create(dir, "ablation_trend.csv")?)?;
    Ok((rows, trend))
}

fn ablation_trend(config: &ExperimentConfig, rows: &[AblationRow]) -> Vec<AblationTrend> {
    config
        .kinds
        .iter()
        .map(|&kind| {
            let mut by_factor: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for r in rows.iter().filter(|r| r.kind == kind) {
                if let Some(s) = &r.scores {
                    by_factor.entry(r.factor).or_default().push(s.pr_auc);
                }
            }
            let (f, m): (Vec<f64>, Vec<f64>) = by_factor
                .iter()
                .map(|(&f, v)| (f as f64, v.iter().sum::<f64>() / v.len() as f64))
                .unzip();
            AblationTrend {
                kind,
                n_factors: f.len(),
                spearman: spearman(&f, &m),
            }
        })
        .collect()
}

/// Mean and std across cells of the lagged Spearman correlation between each
/// channel (leading) and SMI, plus SMI autocorrelation, for lags `0..=max_lag`.
/// Uses cells valid in every month.
pub fn run_lagcorr(grid: &GridSeries, max_lag: usize) -> Result<Vec<(String, LagCorrelation)>> {
    let n_cells = grid.n_lat() * grid.n_lon();
    let n_time = grid.n_time();
    let cells: Vec<usize> = (0..n_cells)
        .filter(|&c| (0..n_time).all(|t| grid.mask()[c + n_cells * t]))
        .collect();
    if cells.is_empty() {
        return Err(Error::data("no cell is valid in every month"));
    }
    let series = |values: &[f64], c: usize| -> Vec<f64> { (0..n_time).map(|t| values[c + n_cells * t]).collect() };
    let smi: Vec<Vec<f64>> = cells.iter().map(|&c| series(grid.smi(), c)).collect();
    let mut variables: Vec<(String, &[f64])> =
        grid.channels().iter().map(|ch| (ch.name.clone(), ch.values.as_slice())).collect();
    variables.push(("smi".to_string(), grid.smi()));
    variables
        .into_iter()
        .map(|(name, values)| {
            let per_cell = cells
                .par_iter()
                .zip(&smi)
                .map(|(&c, y)| spearman_lag(&series(values, c), y, max_lag))
                .collect::<Result<Vec<_>>>()?;
            Ok((name, aggregate_lags(&per_cell)))
        })
        .collect()
}

pub fn write_lagcorr(config: &ExperimentConfig, tables: &[(String, LagCorrelation)]) -> Result<()> {
    fs::create_dir_all(&config.output_dir)?;
    report::write_lagcorr_csv(tables, create(&config.output_dir, "lagcorr.csv")?)
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    version: &'a str,
    config_hash: String,
    seeds: &'a [u64],
    search_seed: u64,
    data_seed: Option<u64>,
    stage: &'a str,
    finished_unix: u64,
    config: &'a ExperimentConfig,
}

/// Record the config hash, seeds and crate version next to the reports.
pub fn write_manifest(config: &ExperimentConfig, stage: &str) -> Result<()> {
    let data_seed = match &config.data {
        DataSource::Synthetic(s) => Some(s.params.seed),
        DataSource::Container { .. } => None,
    };
    let manifest = Manifest {
        name: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: config.hash(),
        seeds: &config.seeds,
        search_seed: config.search_seed,
        data_seed,
        stage,
        finished_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        config,
    };
    fs::create_dir_all(&config.output_dir)?;
    write_json(&config.output_dir, "manifest.json", &manifest)
}

/// The whole pipeline: data, class statistics, lag correlations, training and
/// evaluation, ablation.
pub fn run_all(config: &ExperimentConfig) -> Result<EvalReport> {
    config.validate()?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let grid = load_data(config)?;
    let plan = fold_plan(config, &grid)?;
    fs::write(dir.join("fold_plan.json"), plan.to_json()? + "\n")?;
    let class_stats = label_stats(&grid, &plan, config.threshold)?;
    report::write_class_stats_csv(&class_stats, create(dir, "class_stats.csv")?)?;
    let lagcorr = run_lagcorr(&grid, config.max_lag)?;
    write_lagcorr(config, &lagcorr)?;
    let (results, trained) = run_experiment(config, &grid, &plan)?;
    let (ablation, trend) = run_ablation(config, &grid, &plan, &trained)?;
    write_manifest(config, "run")?;
    Ok(EvalReport {
        summary: report::summarize(&results),
        results,
        ablation,
        trend,
        class_stats,
        lagcorr,
    })
}
