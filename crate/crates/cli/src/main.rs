use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use drought_core::runner::{self, DataSource, ResultRow};
use drought_core::{save_grid, ExperimentConfig, ModelKind};
use log::info;

#[derive(Parser)]
#[command(name = "drought", version, about = "Agricultural drought classification from gridded climate data")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Settings applied on top of the TOML config (or the defaults).
#[derive(Args)]
struct Overrides {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Read the grid from a container file instead of simulating it.
    #[arg(long, global = true)]
    grid: Option<PathBuf>,
    #[arg(long, global = true, value_delimiter = ',')]
    kinds: Option<Vec<ModelKind>>,
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    splits: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    factors: Option<Vec<usize>>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    /// Training samples drawn per epoch for the neural models.
    #[arg(long, global = true)]
    epoch_samples: Option<usize>,
    /// Size of the fixed validation subset used for early stopping.
    #[arg(long, global = true)]
    val_samples: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a grid and write it as a container file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_lat: Option<usize>,
        #[arg(long)]
        n_lon: Option<usize>,
        #[arg(long)]
        months: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Lagged rank correlation of every channel with SMI.
    Lagcorr,
    /// Search, train and evaluate every configured (kind, split, seed).
    Train,
    /// Evaluate saved models on coarsened grids.
    Ablate,
    /// Print the summary tables of a finished run.
    Report,
    /// Everything: class statistics, lag correlations, training, ablation.
    Run,
    /// Print the effective config as TOML.
    Config,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = &self.grid {
            cfg.data = DataSource::Container { path: v.clone() };
        }
        if let Some(v) = &self.kinds {
            cfg.kinds = v.clone();
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = &self.splits {
            cfg.splits = v.clone();
        }
        if let Some(v) = &self.factors {
            cfg.factors = v.clone();
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.train.max_epochs = v;
        }
        if self.epoch_samples.is_some() {
            cfg.train.epoch_samples = self.epoch_samples;
        }
        if self.val_samples.is_some() {
            cfg.train.val_samples = self.val_samples;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = cli.overrides.resolve()?;
    let started = Instant::now();
    let failures = match cli.command {
        Command::Synth {
            out,
            n_lat,
            n_lon,
            months,
            seed,
        } => {
            let DataSource::Synthetic(mut synth) = cfg.data else {
                bail!("synth needs a synthetic data source, not --grid");
            };
            synth.n_lat = n_lat.unwrap_or(synth.n_lat);
            synth.n_lon = n_lon.unwrap_or(synth.n_lon);
            synth.n_months = months.unwrap_or(synth.n_months);
            synth.params.seed = seed.unwrap_or(synth.params.seed);
            let grid = synth.generate()?;
            save_grid(&grid, &out).with_context(|| format!("writing {}", out.display()))?;
            let sidecar = out.with_extension("json");
            fs::write(&sidecar, serde_json::to_string_pretty(&synth)? + "\n")?;
            info!("wrote {} and {}", out.display(), sidecar.display());
            0
        }
        Command::Lagcorr => {
            let grid = runner::load_data(&cfg)?;
            let tables = runner::run_lagcorr(&grid, cfg.max_lag)?;
            runner::write_lagcorr(&cfg, &tables)?;
            for (name, table) in &tables {
                let cells: Vec<String> = table
                    .lags
                    .iter()
                    .take(4)
                    .map(|l| l.mean.map_or("-".into(), |m| format!("{m:+.3}")))
                    .collect();
                println!("{name:<10} lags 0..3: {}", cells.join(" "));
            }
            0
        }
        Command::Train => {
            let grid = runner::load_data(&cfg)?;
            let plan = runner::fold_plan(&cfg, &grid)?;
            let (rows, _) = runner::run_experiment(&cfg, &grid, &plan)?;
            runner::write_manifest(&cfg, "train")?;
            print_file(&cfg.output_dir.join("summary.csv"))?;
            count_failed(&rows)
        }
        Command::Ablate => {
            let grid = runner::load_data(&cfg)?;
            let plan = runner::fold_plan(&cfg, &grid)?;
            let trained = runner::load_trained(&cfg)?;
            if trained.models.is_empty() {
                bail!("no saved models under {} (run `train` first)", cfg.output_dir.display());
            }
            let (rows, _) = runner::run_ablation(&cfg, &grid, &plan, &trained)?;
            runner::write_manifest(&cfg, "ablate")?;
            print_file(&cfg.output_dir.join("ablation_trend.csv"))?;
            rows.iter().filter(|r| matches!(r.status, runner::Status::Failed(_))).count()
        }
        Command::Report => {
            let mut any = false;
            for name in ["class_stats.csv", "summary.csv", "ablation_trend.csv"] {
                let path = cfg.output_dir.join(name);
                if path.exists() {
                    println!("== {name}");
                    print_file(&path)?;
                    any = true;
                }
            }
            if !any {
                bail!("no reports under {}", cfg.output_dir.display());
            }
            0
        }
        Command::Run => {
            let report = runner::run_all(&cfg)?;
            print_file(&cfg.output_dir.join("summary.csv"))?;
            print_file(&cfg.output_dir.join("ablation_trend.csv"))?;
            report.failures()
        }
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            0
        }
    };
    info!("done in {:.1?}", started.elapsed());
    if failures > 0 {
        eprintln!("{failures} combination(s) failed; see the status columns in {}", cfg.output_dir.display());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn count_failed(rows: &[ResultRow]) -> usize {
    rows.iter().filter(|r| !r.status.is_ok()).count()
}

/// Print a CSV file with aligned columns.
fn print_file(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    let n_cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..n_cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0))
        .collect();
    for row in rows {
        let line: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        println!("{}", line.join("  ").trim_end());
    }
    Ok(())
}
