use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{mean_std, Confusion, LagCorrelation};
use crate::models::ModelKind;

/// Fixed-precision float cell so repeated runs produce identical bytes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.10}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Status {
    Ok,
    Failed(String),
    Skipped(String),
}

impl Status {
    pub fn is_ok(&self) -> bool {
        matches!(self, Status::Ok)
    }

    fn label(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Failed(_) => "failed",
            Status::Skipped(_) => "skipped",
        }
    }

    fn message(&self) -> &str {
        match self {
            Status::Ok => "",
            Status::Failed(m) | Status::Skipped(m) => m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub pr_auc: f64,
    pub macro_f1: f64,
    pub confusion: Confusion,
    pub positive_frequency: f64,
    pub n: usize,
}

/// Test metrics of one `(kind, split, seed)` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub kind: ModelKind,
    pub split: usize,
    pub test_fold: usize,
    pub seed: u64,
    pub status: Status,
    pub scores: Option<Scores>,
    pub epochs: usize,
}

/// Mean and sample std over the successful seeds of one `(kind, split)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub kind: ModelKind,
    pub split: usize,
    pub test_fold: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    pub pr_auc: Option<(f64, f64)>,
    pub macro_f1: Option<(f64, f64)>,
    pub positive_frequency: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub kind: ModelKind,
    pub factor: usize,
    pub seed: u64,
    pub status: Status,
    pub scores: Option<Scores>,
}

/// Per-kind rank correlation between coarsening factor and mean PR-AUC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTrend {
    pub kind: ModelKind,
    pub n_factors: usize,
    pub spearman: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStatRow {
    /// `None` for the whole series.
    pub fold: Option<usize>,
    pub start: String,
    pub end: String,
    pub positive_frequency: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub results: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub ablation: Vec<AblationRow>,
    pub trend: Vec<AblationTrend>,
    pub class_stats: Vec<ClassStatRow>,
    pub lagcorr: Vec<(String, LagCorrelation)>,
}

impl EvalReport {
    pub fn all_ok(&self) -> bool {
        self.results.iter().all(|r| r.status.is_ok())
            && self.ablation.iter().all(|r| !matches!(r.status, Status::Failed(_)))
    }

    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| !r.status.is_ok()).count()
            + self.ablation.iter().filter(|r| matches!(r.status, Status::Failed(_))).count()
    }

    pub fn summary_for(&self, kind: ModelKind, split: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.kind == kind && s.split == split)
    }
}

pub fn summarize(results: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(ModelKind, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in results {
        groups.entry((r.kind, r.split)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((kind, split), rows)| {
            let ok: Vec<&Scores> = rows.iter().filter_map(|r| r.scores.as_ref()).collect();
            let pr: Vec<f64> = ok.iter().map(|s| s.pr_auc).collect();
            let f1: Vec<f64> = ok.iter().map(|s| s.macro_f1).collect();
            SummaryRow {
                kind,
                split,
                test_fold: rows[0].test_fold,
                n_ok: ok.len(),
                n_failed: rows.len() - ok.len(),
                pr_auc: mean_std(&pr),
                macro_f1: mean_std(&f1),
                positive_frequency: ok.first().map(|s| s.positive_frequency),
            }
        })
        .collect()
}

fn score_cells(s: Option<&Scores>) -> [String; 8] {
    match s {
        Some(s) => [
            fmt_f64(s.pr_auc),
            fmt_f64(s.macro_f1),
            s.confusion.tp.to_string(),
            s.confusion.fp.to_string(),
            s.confusion.tn.to_string(),
            s.confusion.fn_.to_string(),
            fmt_f64(s.positive_frequency),
            s.n.to_string(),
        ],
        None => Default::default(),
    }
}

const SCORE_HEADER: [&str; 8] = ["pr_auc", "macro_f1", "tp", "fp", "tn", "fn", "positive_frequency", "n"];

pub fn write_results_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["kind", "split", "test_fold", "seed", "status"];
    header.extend(SCORE_HEADER);
    header.extend(["epochs", "message"]);
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.kind.to_string(),
            r.split.to_string(),
            r.test_fold.to_string(),
            r.seed.to_string(),
            r.status.label().to_string(),
        ];
        rec.extend(score_cells(r.scores.as_ref()));
        rec.extend([r.epochs.to_string(), r.status.message().to_string()]);
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "kind", "split", "test_fold", "n_ok", "n_failed", "pr_auc_mean", "pr_auc_std", "macro_f1_mean",
        "macro_f1_std", "positive_frequency",
    ])?;
    for r in rows {
        out.write_record([
            r.kind.to_string(),
            r.split.to_string(),
            r.test_fold.to_string(),
            r.n_ok.to_string(),
            r.n_failed.to_string(),
            fmt_opt(r.pr_auc.map(|p| p.0)),
            fmt_opt(r.pr_auc.map(|p| p.1)),
            fmt_opt(r.macro_f1.map(|p| p.0)),
            fmt_opt(r.macro_f1.map(|p| p.1)),
            fmt_opt(r.positive_frequency),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["kind", "factor", "seed", "status"];
    header.extend(SCORE_HEADER);
    header.push("message");
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.kind.to_string(),
            r.factor.to_string(),
            r.seed.to_string(),
            r.status.label().to_string(),
        ];
        rec.extend(score_cells(r.scores.as_ref()));
        rec.push(r.status.message().to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trend_csv<W: Write>(rows: &[AblationTrend], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["kind", "n_factors", "spearman_factor_vs_pr_auc", "sign"])?;
    for r in rows {
        let sign = match r.spearman {
            Some(v) if v < 0.0 => "negative",
            Some(v) if v > 0.0 => "positive",
            Some(_) => "zero",
            None => "undefined",
        };
        out.write_record([r.kind.to_string(), r.n_factors.to_string(), fmt_opt(r.spearman), sign.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_class_stats_csv<W: Write>(rows: &[ClassStatRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["fold", "start", "end", "positive_frequency"])?;
    for r in rows {
        out.write_record([
            r.fold.map_or_else(|| "all".to_string(), |f| f.to_string()),
            r.start.clone(),
            r.end.clone(),
            fmt_opt(r.positive_frequency),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_lagcorr_csv<W: Write>(tables: &[(String, LagCorrelation)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["variable", "lag", "mean", "std", "n"])?;
    for (name, table) in tables {
        for l in &table.lags {
            out.write_record([name.clone(), l.lag.to_string(), fmt_opt(l.mean), fmt_opt(l.std), l.n.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}
