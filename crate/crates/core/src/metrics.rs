//! Imbalance-aware evaluation and lagged rank correlation.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores (higher = more drought-like) aligned with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPredictions {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredPredictions {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::argument(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::argument("no predictions"));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::domain("labels must be 0 or 1"));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite score {s}")));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().map(|&l| l as usize).sum()
    }

    pub fn positive_frequency(&self) -> f64 {
        self.positives() as f64 / self.len() as f64
    }
}

/// One threshold step of the precision-recall curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Precision/recall at every distinct score, thresholds descending. Tied
/// scores form a single step.
pub fn pr_curve(p: &ScoredPredictions) -> Result<Vec<PrPoint>> {
    let total_pos = p.positives();
    if total_pos == 0 {
        return Err(Error::UndefinedMetric("PR curve needs at least one positive label".into()));
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p.scores[b].total_cmp(&p.scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = p.scores[order[i]];
        while i < order.len() && p.scores[order[i]] == s {
            if p.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: s,
            recall: tp as f64 / total_pos as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(points)
}

/// Average precision: `Σ (R_i − R_{i−1}) · P_i` over descending score steps.
pub fn pr_auc(p: &ScoredPredictions) -> Result<f64> {
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for pt in pr_curve(p)? {
        ap += (pt.recall - prev_recall) * pt.precision;
        prev_recall = pt.recall;
    }
    Ok(ap)
}

pub fn write_pr_curve_csv<W: Write>(points: &[PrPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["recall", "precision", "threshold"])?;
    for pt in points {
        out.write_record([pt.recall.to_string(), pt.precision.to_string(), pt.threshold.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    /// Counts with `score >= threshold` predicted positive.
    pub fn at_threshold(p: &ScoredPredictions, threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &l) in p.scores.iter().zip(&p.labels) {
            match (s >= threshold, l == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    }

    pub fn f1_positive(&self) -> f64 {
        Self::f1(self.tp, self.fp, self.fn_)
    }

    pub fn f1_negative(&self) -> f64 {
        Self::f1(self.tn, self.fn_, self.fp)
    }

    pub fn macro_f1(&self) -> f64 {
        0.5 * (self.f1_positive() + self.f1_negative())
    }
}

/// Mean of the per-class F1 over both classes. A class absent from both
/// labels and predictions contributes 0.
pub fn macro_f1(p: &ScoredPredictions, threshold: f64) -> f64 {
    Confusion::at_threshold(p, threshold).macro_f1()
}

/// Ranks starting at 1, ties receiving the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman ρ; `None` when either series is constant or shorter than 2.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// ρ between `x[0..n-τ]` and `y[τ..n]` for τ = 0..=max_lag (x leads y).
pub fn spearman_lag(x: &[f64], y: &[f64], max_lag: usize) -> Result<Vec<Option<f64>>> {
    if x.len() != y.len() {
        return Err(Error::argument("lagged series must have equal length"));
    }
    let n = x.len();
    if n <= max_lag + 2 {
        return Err(Error::data(format!(
            "series of length {n} too short for max lag {max_lag}"
        )));
    }
    Ok((0..=max_lag)
        .map(|lag| spearman(&x[..n - lag], &y[lag..]))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagStat {
    pub lag: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Number of series with a defined correlation at this lag.
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagCorrelation {
    pub lags: Vec<LagStat>,
}

/// Mean and sample standard deviation per lag across many series.
pub fn aggregate_lags(per_series: &[Vec<Option<f64>>]) -> LagCorrelation {
    let n_lags = per_series.iter().map(Vec::len).max().unwrap_or(0);
    let lags = (0..n_lags)
        .map(|lag| {
            let vals: Vec<f64> = per_series.iter().filter_map(|s| s.get(lag).copied().flatten()).collect();
            let (mean, std) = mean_std(&vals).map_or((None, None), |(m, s)| (Some(m), Some(s)));
            LagStat {
                lag,
                mean,
                std,
                n: vals.len(),
            }
        })
        .collect();
    LagCorrelation { lags }
}

/// Mean and sample (n − 1) standard deviation; std is 0 for a single value.
pub fn mean_std(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}
