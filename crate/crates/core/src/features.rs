//! Windowed samples: trailing feature windows with seasonal and positional
//! encodings, min-max normalization fitted on training months.
//!
//! Feature columns per window row, in order: monthly channels, static
//! rasters, normalized latitude, normalized longitude, then the seasonal
//! `(cos, sin)` pair as the last two columns.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geogrid::{binarize_smi, GridSeries};
use crate::time::{MonthRange, YearMonth};

pub const DEFAULT_WINDOW: usize = 6;

/// `(cos(2π·month/12), sin(2π·month/12))`.
pub fn seasonal_encoding(month: u8) -> Result<(f64, f64)> {
    if !(1..=12).contains(&month) {
        return Err(Error::argument(format!("month {month} outside 1..=12")));
    }
    // exact values at the quarter points keep the encoding free of 1e-16 residue
    Ok(match month {
        3 => (0.0, 1.0),
        6 => (-1.0, 0.0),
        9 => (0.0, -1.0),
        12 => (1.0, 0.0),
        m => {
            let angle = 2.0 * PI * m as f64 / 12.0;
            (angle.cos(), angle.sin())
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl ChannelStats {
    pub fn normalize(&self, v: f64) -> f64 {
        normalize(v, self.min, self.max)
    }
}

/// Per-channel ranges fitted on training months, plus the positional ranges
/// of the grid the statistics were fitted on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub channels: Vec<ChannelStats>,
    pub lat: ChannelStats,
    pub lon: ChannelStats,
}

/// `(v - min) / (max - min)` clamped to [0, 1]; constant channels map to 0.
pub fn normalize(v: f64, min: f64, max: f64) -> f64 {
    if max <= min {
        return 0.0;
    }
    ((v - min) / (max - min)).clamp(0.0, 1.0)
}

/// Min/max of every monthly channel over valid cell-months inside `train`.
pub fn fit_normalization(grid: &GridSeries, train: MonthRange) -> Result<NormalizationStats> {
    let t_lo = grid.time_index(train.start.max(grid.start()));
    let t_hi = grid.time_index(train.end.min(grid.time_range().end));
    let (t_lo, t_hi) = match (t_lo, t_hi) {
        (Some(a), Some(b)) if a <= b => (a, b),
        _ => {
            return Err(Error::data(format!(
                "training range {}..={} does not overlap the grid",
                train.start, train.end
            )))
        }
    };
    let cells = grid.n_lat() * grid.n_lon();
    let mut channels = Vec::with_capacity(grid.channels().len());
    for ch in grid.channels() {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in t_lo..=t_hi {
            let base = t * cells;
            for c in 0..cells {
                if grid.mask()[base + c] {
                    let v = ch.values[base + c];
                    min = min.min(v);
                    max = max.max(v);
                }
            }
        }
        if min > max {
            return Err(Error::data(format!(
                "channel {:?} has no valid values in the training range",
                ch.name
            )));
        }
        channels.push(ChannelStats {
            name: ch.name.clone(),
            min,
            max,
        });
    }
    let (lat, lon) = positional_stats(grid)?;
    Ok(NormalizationStats { channels, lat, lon })
}

fn positional_stats(grid: &GridSeries) -> Result<(ChannelStats, ChannelStats)> {
    let g = grid.geometry();
    let (mut la, mut lo) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
    for j in 0..g.n_lon {
        for i in 0..g.n_lat {
            if grid.cell_ever_valid(i, j) {
                let (lat, lon) = g.cell_center(i, j);
                la = (la.0.min(lat), la.1.max(lat));
                lo = (lo.0.min(lon), lo.1.max(lon));
            }
        }
    }
    if la.0 > la.1 {
        return Err(Error::data("grid has no valid cells"));
    }
    Ok((
        ChannelStats {
            name: "lat".into(),
            min: la.0,
            max: la.1,
        },
        ChannelStats {
            name: "lon".into(),
            min: lo.0,
            max: lo.1,
        },
    ))
}

/// One training example: `window` consecutive months of `n_features` values.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    /// Row-major `window x n_features`; row `window - 1` is the label month.
    pub features: Vec<f64>,
    pub label: u8,
    pub cell: (usize, usize),
    pub label_time: YearMonth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window: usize,
    pub threshold: f64,
    pub include_statics: bool,
    pub include_position: bool,
    pub include_season: bool,
    /// Only label months inside this range are emitted (all months if `None`).
    pub label_range: Option<MonthRange>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            threshold: crate::geogrid::DEFAULT_SMI_THRESHOLD,
            include_statics: true,
            include_position: true,
            include_season: true,
            label_range: None,
        }
    }
}

impl WindowConfig {
    pub fn n_features(&self, grid: &GridSeries) -> usize {
        grid.channels().len()
            + if self.include_statics { grid.statics().len() } else { 0 }
            + if self.include_position { 2 } else { 0 }
            + if self.include_season { 2 } else { 0 }
    }

    /// Column names matching the emitted feature layout.
    pub fn feature_names(&self, grid: &GridSeries) -> Vec<String> {
        let mut names: Vec<String> = grid.channels().iter().map(|c| c.name.clone()).collect();
        if self.include_statics {
            names.extend(grid.statics().iter().map(|s| s.name.clone()));
        }
        if self.include_position {
            names.extend(["lat".to_string(), "lon".to_string()]);
        }
        if self.include_season {
            names.extend(["season_cos".to_string(), "season_sin".to_string()]);
        }
        names
    }
}

/// Iterator over all materializable windows, cell-major then time.
pub struct Windows<'a> {
    grid: &'a GridSeries,
    stats: &'a NormalizationStats,
    config: &'a WindowConfig,
    n_features: usize,
    season: Vec<(f64, f64)>,
    cell: usize,
    t: usize,
    t_end: usize,
    run: usize,
    position: (f64, f64),
}

/// Streams one sample per valid `(cell, t)` whose full trailing window is valid.
pub fn build_windows<'a>(
    grid: &'a GridSeries,
    stats: &'a NormalizationStats,
    config: &'a WindowConfig,
) -> Result<Windows<'a>> {
    if config.window < 1 {
        return Err(Error::argument("window must be >= 1"));
    }
    if config.window > grid.n_time() {
        return Err(Error::argument(format!(
            "window {} exceeds series length {}",
            config.window,
            grid.n_time()
        )));
    }
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(Error::argument("threshold must lie in (0, 1)"));
    }
    if stats.channels.len() != grid.channels().len()
        || stats.channels.iter().zip(grid.channels()).any(|(s, c)| s.name != c.name)
    {
        return Err(Error::argument("normalization stats do not match grid channels"));
    }
    let season = (0..grid.n_time())
        .map(|t| seasonal_encoding(grid.timestamp(t).month()))
        .collect::<Result<Vec<_>>>()?;
    let mut w = Windows {
        grid,
        stats,
        config,
        n_features: config.n_features(grid),
        season,
        cell: 0,
        t: 0,
        t_end: grid.n_time(),
        run: 0,
        position: (0.0, 0.0),
    };
    if let Some(r) = config.label_range {
        if r.end < grid.start() || r.start > grid.time_range().end {
            w.t_end = 0;
        }
    }
    w.enter_cell();
    Ok(w)
}

impl Windows<'_> {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    fn enter_cell(&mut self) {
        self.t = 0;
        self.run = 0;
        if self.cell < self.grid.geometry().n_cells() {
            let g = self.grid.geometry();
            let (i, j) = (self.cell % g.n_lat, self.cell / g.n_lat);
            let (lat, lon) = g.cell_center(i, j);
            self.position = (self.stats.lat.normalize(lat), self.stats.lon.normalize(lon));
        }
    }

    fn materialize(&self, t: usize) -> SampleWindow {
        let grid = self.grid;
        let g = grid.geometry();
        let (i, j) = (self.cell % g.n_lat, self.cell / g.n_lat);
        let w = self.config.window;
        let mut features = Vec::with_capacity(w * self.n_features);
        for tt in t + 1 - w..=t {
            let idx = grid.index(i, j, tt);
            for (ch, st) in grid.channels().iter().zip(&self.stats.channels) {
                features.push(st.normalize(ch.values[idx]));
            }
            if self.config.include_statics {
                for s in grid.statics() {
                    features.push(s.values[self.cell].clamp(0.0, 1.0));
                }
            }
            if self.config.include_position {
                features.push(self.position.0);
                features.push(self.position.1);
            }
            if self.config.include_season {
                let (c, s) = self.season[tt];
                features.push(c);
                features.push(s);
            }
        }
        let idx = grid.index(i, j, t);
        let label = match grid.labels() {
            Some(l) => l[idx],
            None => binarize_smi(grid.smi()[idx], self.config.threshold)
                .expect("grid construction validates smi and the threshold is checked"),
        };
        SampleWindow {
            features,
            label,
            cell: (i, j),
            label_time: grid.timestamp(t),
        }
    }
}

impl Iterator for Windows<'_> {
    type Item = SampleWindow;

    fn next(&mut self) -> Option<SampleWindow> {
        let n_cells = self.grid.geometry().n_cells();
        while self.cell < n_cells {
            while self.t < self.t_end {
                let t = self.t;
                self.t += 1;
                if self.grid.mask()[t * n_cells + self.cell] {
                    self.run += 1;
                } else {
                    self.run = 0;
                    continue;
                }
                if self.run < self.config.window {
                    continue;
                }
                if let Some(r) = self.config.label_range {
                    if !r.contains(self.grid.timestamp(t)) {
                        continue;
                    }
                }
                return Some(self.materialize(t));
            }
            self.cell += 1;
            self.enter_cell();
        }
        None
    }
}

/// Contiguous storage for many windows of identical shape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleSet {
    pub window: usize,
    pub n_features: usize,
    features: Vec<f64>,
    pub labels: Vec<u8>,
    pub cells: Vec<(usize, usize)>,
    pub label_times: Vec<YearMonth>,
}

impl SampleSet {
    pub fn new(window: usize, n_features: usize) -> Self {
        Self {
            window,
            n_features,
            ..Default::default()
        }
    }

    pub fn collect(windows: Windows<'_>) -> Self {
        let mut set = SampleSet::new(windows.config.window, windows.n_features());
        for w in windows {
            set.push(w);
        }
        set
    }

    pub fn push(&mut self, w: SampleWindow) {
        assert_eq!(w.features.len(), self.window * self.n_features, "window shape mismatch");
        self.features.extend_from_slice(&w.features);
        self.labels.push(w.label);
        self.cells.push(w.cell);
        self.label_times.push(w.label_time);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.window * self.n_features
    }

    /// Flattened features of sample `i`.
    pub fn features(&self, i: usize) -> &[f64] {
        let d = self.window_len();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn sample(&self, i: usize) -> SampleWindow {
        SampleWindow {
            features: self.features(i).to_vec(),
            label: self.labels[i],
            cell: self.cells[i],
            label_time: self.label_times[i],
        }
    }

    pub fn subset(&self, indices: &[usize]) -> SampleSet {
        let mut out = SampleSet::new(self.window, self.n_features);
        out.features.reserve(indices.len() * self.window_len());
        for &i in indices {
            out.features.extend_from_slice(self.features(i));
            out.labels.push(self.labels[i]);
            out.cells.push(self.cells[i]);
            out.label_times.push(self.label_times[i]);
        }
        out
    }

    pub fn positive_frequency(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        Some(self.labels.iter().map(|&l| l as usize).sum::<usize>() as f64 / self.len() as f64)
    }

    /// One CSV row per sample: cell, label month, label, flattened features
    /// named `<feature>@t-<lag>`.
    pub fn write_csv<W: Write>(&self, feature_names: &[String], w: W) -> Result<()> {
        if feature_names.len() != self.n_features {
            return Err(Error::argument("feature name count does not match sample layout"));
        }
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["lat_idx".to_string(), "lon_idx".into(), "label_time".into(), "label".into()];
        for row in 0..self.window {
            let lag = self.window - 1 - row;
            header.extend(feature_names.iter().map(|n| format!("{n}@t-{lag}")));
        }
        out.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![
                self.cells[i].0.to_string(),
                self.cells[i].1.to_string(),
                self.label_times[i].to_string(),
                self.labels[i].to_string(),
            ];
            rec.extend(self.features(i).iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}
