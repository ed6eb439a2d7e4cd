//! Masked regular lat-lon raster stacks, SMI labeling and block coarsening.
//!
//! Every per-month raster is stored as one contiguous buffer indexed
//! column-major by `(lat, lon, time)`: `lat + n_lat * (lon + n_lon * t)`.
//! Static rasters (land-use fractions) drop the time axis.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{MonthRange, YearMonth};

/// Default SMI threshold at or below which a cell-month counts as drought.
pub const DEFAULT_SMI_THRESHOLD: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub lat_origin: f64,
    pub lon_origin: f64,
    pub cell_size: f64,
    pub n_lat: usize,
    pub n_lon: usize,
}

impl GridGeometry {
    pub fn n_cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    /// Center coordinates `(lat, lon)` of a cell.
    pub fn cell_center(&self, lat_idx: usize, lon_idx: usize) -> (f64, f64) {
        (
            self.lat_origin + (lat_idx as f64 + 0.5) * self.cell_size,
            self.lon_origin + (lon_idx as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn cell_index(&self, lat_idx: usize, lon_idx: usize) -> usize {
        lat_idx + self.n_lat * lon_idx
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub name: String,
    pub values: Vec<f64>,
}

impl Raster {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

/// Masked raster stack over consecutive calendar months.
///
/// Immutable after construction; all invariants are checked in [`GridSeries::new`].
#[derive(Clone, Debug)]
pub struct GridSeries {
    geometry: GridGeometry,
    start: YearMonth,
    n_time: usize,
    channels: Vec<Raster>,
    smi: Vec<f64>,
    statics: Vec<Raster>,
    mask: Vec<bool>,
    labels: Option<Vec<u8>>,
}

impl GridSeries {
    /// Builds a grid. `channels`, `smi` and `mask` hold `n_lat * n_lon * n_time`
    /// values; `statics` hold `n_lat * n_lon`.
    pub fn new(
        geometry: GridGeometry,
        start: YearMonth,
        n_time: usize,
        channels: Vec<Raster>,
        smi: Vec<f64>,
        statics: Vec<Raster>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if geometry.n_lat == 0 || geometry.n_lon == 0 || n_time == 0 {
            return Err(Error::argument("grid dimensions must be non-zero"));
        }
        if !(geometry.cell_size > 0.0) {
            return Err(Error::argument("cell size must be positive"));
        }
        let n = geometry.n_cells() * n_time;
        if smi.len() != n || mask.len() != n {
            return Err(Error::argument(format!(
                "smi/mask length {}/{} != {n}",
                smi.len(),
                mask.len()
            )));
        }
        for ch in &channels {
            if ch.values.len() != n {
                return Err(Error::argument(format!(
                    "channel {:?} has {} values, expected {n}",
                    ch.name,
                    ch.values.len()
                )));
            }
        }
        for st in &statics {
            if st.values.len() != geometry.n_cells() {
                return Err(Error::argument(format!(
                    "static raster {:?} has {} values, expected {}",
                    st.name,
                    st.values.len(),
                    geometry.n_cells()
                )));
            }
        }
        for (i, (&v, &ok)) in smi.iter().zip(&mask).enumerate() {
            if ok && !(0.0..=1.0).contains(&v) {
                return Err(Error::domain(format!("smi {v} at index {i} outside [0, 1]")));
            }
        }
        Ok(Self {
            geometry,
            start,
            n_time,
            channels,
            smi,
            statics,
            mask,
            labels: None,
        })
    }

    /// Attaches explicit labels that take precedence over thresholding SMI.
    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.smi.len() {
            return Err(Error::argument("label raster shape mismatch"));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::domain("labels must be 0 or 1"));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn n_lat(&self) -> usize {
        self.geometry.n_lat
    }

    pub fn n_lon(&self) -> usize {
        self.geometry.n_lon
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn start(&self) -> YearMonth {
        self.start
    }

    pub fn timestamp(&self, t: usize) -> YearMonth {
        self.start.add_months(t as i64)
    }

    pub fn timestamps(&self) -> Vec<YearMonth> {
        (0..self.n_time).map(|t| self.timestamp(t)).collect()
    }

    pub fn time_range(&self) -> MonthRange {
        MonthRange {
            start: self.start,
            end: self.timestamp(self.n_time - 1),
        }
    }

    pub fn time_index(&self, t: YearMonth) -> Option<usize> {
        let d = self.start.months_until(t);
        (d >= 0 && (d as usize) < self.n_time).then_some(d as usize)
    }

    pub fn channels(&self) -> &[Raster] {
        &self.channels
    }

    pub fn channel(&self, name: &str) -> Option<&Raster> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn statics(&self) -> &[Raster] {
        &self.statics
    }

    pub fn smi(&self) -> &[f64] {
        &self.smi
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    #[inline]
    pub fn index(&self, lat_idx: usize, lon_idx: usize, t: usize) -> usize {
        lat_idx + self.geometry.n_lat * (lon_idx + self.geometry.n_lon * t)
    }

    #[inline]
    pub fn is_valid(&self, lat_idx: usize, lon_idx: usize, t: usize) -> bool {
        self.mask[self.index(lat_idx, lon_idx, t)]
    }

    /// True if the cell is valid in at least one month.
    pub fn cell_ever_valid(&self, lat_idx: usize, lon_idx: usize) -> bool {
        (0..self.n_time).any(|t| self.is_valid(lat_idx, lon_idx, t))
    }

    /// Drought label of a valid cell-month: the explicit label raster if
    /// present, otherwise `binarize_smi(smi, threshold)`.
    pub fn label_at(&self, lat_idx: usize, lon_idx: usize, t: usize, threshold: f64) -> Result<u8> {
        let i = self.index(lat_idx, lon_idx, t);
        if !self.mask[i] {
            return Err(Error::data(format!(
                "cell ({lat_idx}, {lon_idx}) invalid at month {t}"
            )));
        }
        match &self.labels {
            Some(l) => Ok(l[i]),
            None => binarize_smi(self.smi[i], threshold),
        }
    }

    /// Exact equality including the bit patterns of every stored float.
    pub fn bitwise_eq(&self, other: &GridSeries) -> bool {
        fn bits(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        fn rasters(a: &[Raster], b: &[Raster]) -> bool {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(x, y)| x.name == y.name && bits(&x.values, &y.values))
        }
        self.geometry.lat_origin.to_bits() == other.geometry.lat_origin.to_bits()
            && self.geometry.lon_origin.to_bits() == other.geometry.lon_origin.to_bits()
            && self.geometry.cell_size.to_bits() == other.geometry.cell_size.to_bits()
            && self.geometry.n_lat == other.geometry.n_lat
            && self.geometry.n_lon == other.geometry.n_lon
            && self.start == other.start
            && self.n_time == other.n_time
            && rasters(&self.channels, &other.channels)
            && rasters(&self.statics, &other.statics)
            && bits(&self.smi, &other.smi)
            && self.mask == other.mask
            && self.labels == other.labels
    }

    /// Imports a tiny grid from CSV, one row per cell-month.
    ///
    /// Required columns: `lat_idx, lon_idx, year, month, smi`. Columns named
    /// `static:<name>` are static per-cell rasters (must not vary over time);
    /// every other column is a monthly channel. Grid extent is inferred from
    /// the largest indices and the time axis from the earliest/latest month.
    /// Cell-months without a row are masked invalid.
    pub fn from_csv<R: Read>(
        reader: R,
        lat_origin: f64,
        lon_origin: f64,
        cell_size: f64,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::data(format!("missing CSV column {name:?}")))
        };
        let (c_lat, c_lon, c_year, c_month, c_smi) =
            (col("lat_idx")?, col("lon_idx")?, col("year")?, col("month")?, col("smi")?);
        let fixed = [c_lat, c_lon, c_year, c_month, c_smi];
        let mut channel_cols = Vec::new();
        let mut static_cols = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            if fixed.contains(&i) {
                continue;
            }
            match h.strip_prefix("static:") {
                Some(name) => static_cols.push((i, name.to_string())),
                None => channel_cols.push((i, h.to_string())),
            }
        }

        struct Row {
            lat: usize,
            lon: usize,
            time: YearMonth,
            smi: f64,
            channels: Vec<f64>,
            statics: Vec<f64>,
        }
        let parse_f = |rec: &csv::StringRecord, i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::data(format!("bad number {:?} in column {}", &rec[i], &headers[i])))
        };
        let parse_u = |rec: &csv::StringRecord, i: usize| -> Result<usize> {
            rec[i]
                .parse::<usize>()
                .map_err(|_| Error::data(format!("bad index {:?} in column {}", &rec[i], &headers[i])))
        };
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let year = rec[c_year]
                .parse::<i32>()
                .map_err(|_| Error::data(format!("bad year {:?}", &rec[c_year])))?;
            let month = rec[c_month]
                .parse::<u8>()
                .map_err(|_| Error::data(format!("bad month {:?}", &rec[c_month])))?;
            rows.push(Row {
                lat: parse_u(&rec, c_lat)?,
                lon: parse_u(&rec, c_lon)?,
                time: YearMonth::new(year, month)?,
                smi: parse_f(&rec, c_smi)?,
                channels: channel_cols
                    .iter()
                    .map(|&(i, _)| parse_f(&rec, i))
                    .collect::<Result<_>>()?,
                statics: static_cols
                    .iter()
                    .map(|&(i, _)| parse_f(&rec, i))
                    .collect::<Result<_>>()?,
            });
        }
        if rows.is_empty() {
            return Err(Error::data("CSV contains no rows"));
        }
        let n_lat = rows.iter().map(|r| r.lat).max().unwrap() + 1;
        let n_lon = rows.iter().map(|r| r.lon).max().unwrap() + 1;
        let start = rows.iter().map(|r| r.time).min().unwrap();
        let end = rows.iter().map(|r| r.time).max().unwrap();
        let n_time = start.months_until(end) as usize + 1;
        let geometry = GridGeometry {
            lat_origin,
            lon_origin,
            cell_size,
            n_lat,
            n_lon,
        };
        let n = geometry.n_cells() * n_time;
        let mut smi = vec![0.0; n];
        let mut mask = vec![false; n];
        let mut channels: Vec<Raster> = channel_cols
            .iter()
            .map(|(_, name)| Raster::new(name.clone(), vec![0.0; n]))
            .collect();
        let mut statics: Vec<Raster> = static_cols
            .iter()
            .map(|(_, name)| Raster::new(name.clone(), vec![0.0; geometry.n_cells()]))
            .collect();
        let mut static_seen: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in rows {
            let t = start.months_until(r.time) as usize;
            let i = r.lat + n_lat * (r.lon + n_lon * t);
            if mask[i] {
                return Err(Error::data(format!(
                    "duplicate row for cell ({}, {}) at {}",
                    r.lat, r.lon, r.time
                )));
            }
            mask[i] = true;
            smi[i] = r.smi;
            for (ch, v) in channels.iter_mut().zip(&r.channels) {
                ch.values[i] = *v;
            }
            let cell = geometry.cell_index(r.lat, r.lon);
            match static_seen.get(&cell) {
                Some(prev) if prev != &r.statics => {
                    return Err(Error::data(format!(
                        "static columns vary over time at cell ({}, {})",
                        r.lat, r.lon
                    )));
                }
                Some(_) => {}
                None => {
                    for (st, v) in statics.iter_mut().zip(&r.statics) {
                        st.values[cell] = *v;
                    }
                    static_seen.insert(cell, r.statics);
                }
            }
        }
        GridSeries::new(geometry, start, n_time, channels, smi, statics, mask)
    }
}

/// Soil condition classes by SMI interval, driest first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DroughtClass {
    Exceptional,
    Extreme,
    Severe,
    Moderate,
    AbnormallyDry,
    None,
}

impl DroughtClass {
    /// True for the classes at or below the default drought threshold.
    pub fn is_drought(self) -> bool {
        matches!(
            self,
            DroughtClass::Exceptional | DroughtClass::Extreme | DroughtClass::Severe | DroughtClass::Moderate
        )
    }
}

fn check_smi(smi: f64) -> Result<()> {
    if (0.0..=1.0).contains(&smi) {
        Ok(())
    } else {
        Err(Error::domain(format!("smi {smi} outside [0, 1]")))
    }
}

/// 1 (drought) iff `smi <= threshold`.
pub fn binarize_smi(smi: f64, threshold: f64) -> Result<u8> {
    check_smi(smi)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::argument(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(u8::from(smi <= threshold))
}

/// Drought monitor class. Intervals are left-open, right-closed; SMI = 0 is
/// folded into the exceptional class.
pub fn classify_smi(smi: f64) -> Result<DroughtClass> {
    check_smi(smi)?;
    Ok(if smi <= 0.02 {
        DroughtClass::Exceptional
    } else if smi <= 0.05 {
        DroughtClass::Extreme
    } else if smi <= 0.1 {
        DroughtClass::Severe
    } else if smi <= 0.2 {
        DroughtClass::Moderate
    } else if smi <= 0.3 {
        DroughtClass::AbnormallyDry
    } else {
        DroughtClass::None
    })
}

/// How labels are derived for a coarsened grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "threshold")]
#[derive(Default)]
pub enum CoarseLabelRule {
    /// Threshold the block-mean SMI (labels stay implicit).
    #[default]
    MeanThenThreshold,
    /// Majority vote over the fine labels of valid block cells; ties are negative.
    MajorityVote(f64),
}


/// Aggregates non-overlapping `factor x factor` blocks into single cells,
/// labels derived by thresholding the mean SMI.
pub fn coarsen(grid: &GridSeries, factor: usize) -> Result<GridSeries> {
    coarsen_with(grid, factor, CoarseLabelRule::MeanThenThreshold)
}

/// Block coarsening with an explicit label rule.
///
/// Blocks at the trailing edges may extend past the grid; out-of-extent
/// positions count as invalid. A coarse cell-month is valid iff at least half
/// of the `factor^2` block positions are valid, and takes the arithmetic mean
/// of the valid fine values. Static rasters average over block cells that are
/// valid in any month.
pub fn coarsen_with(grid: &GridSeries, factor: usize, rule: CoarseLabelRule) -> Result<GridSeries> {
    if factor < 1 {
        return Err(Error::argument("coarsening factor must be >= 1"));
    }
    if factor > grid.n_lat() || factor > grid.n_lon() {
        return Err(Error::argument(format!(
            "coarsening factor {factor} exceeds grid extent {}x{}",
            grid.n_lat(),
            grid.n_lon()
        )));
    }
    if factor == 1 && rule == CoarseLabelRule::MeanThenThreshold {
        return Ok(grid.clone());
    }
    let g = grid.geometry();
    let cg = GridGeometry {
        lat_origin: g.lat_origin,
        lon_origin: g.lon_origin,
        cell_size: g.cell_size * factor as f64,
        n_lat: g.n_lat.div_ceil(factor),
        n_lon: g.n_lon.div_ceil(factor),
    };
    let n_time = grid.n_time();
    let n = cg.n_cells() * n_time;
    let cidx = |i: usize, j: usize, t: usize| i + cg.n_lat * (j + cg.n_lon * t);
    let quorum = factor * factor;

    let block = |ci: usize, cj: usize| {
        let lat_hi = ((ci + 1) * factor).min(g.n_lat);
        let lon_hi = ((cj + 1) * factor).min(g.n_lon);
        (ci * factor..lat_hi).flat_map(move |a| (cj * factor..lon_hi).map(move |b| (a, b)))
    };

    let mut mask = vec![false; n];
    let mut smi = vec![0.0; n];
    let mut channels: Vec<Raster> = grid
        .channels()
        .iter()
        .map(|c| Raster::new(c.name.clone(), vec![0.0; n]))
        .collect();
    let mut labels = match rule {
        CoarseLabelRule::MajorityVote(_) => Some(vec![0u8; n]),
        CoarseLabelRule::MeanThenThreshold => None,
    };
    let mut sums = vec![0.0; grid.channels().len()];
    for t in 0..n_time {
        for cj in 0..cg.n_lon {
            for ci in 0..cg.n_lat {
                let mut count = 0usize;
                let mut positives = 0usize;
                let mut smi_sum = 0.0;
                sums.iter_mut().for_each(|s| *s = 0.0);
                for (a, b) in block(ci, cj) {
                    let fi = grid.index(a, b, t);
                    if !grid.mask()[fi] {
                        continue;
                    }
                    count += 1;
                    smi_sum += grid.smi()[fi];
                    for (s, ch) in sums.iter_mut().zip(grid.channels()) {
                        *s += ch.values[fi];
                    }
                    if let CoarseLabelRule::MajorityVote(th) = rule {
                        positives += grid.label_at(a, b, t, th)? as usize;
                    }
                }
                if 2 * count < quorum {
                    continue;
                }
                let k = cidx(ci, cj, t);
                let denom = count as f64;
                mask[k] = true;
                smi[k] = (smi_sum / denom).clamp(0.0, 1.0);
                for (ch, s) in channels.iter_mut().zip(&sums) {
                    ch.values[k] = s / denom;
                }
                if let Some(l) = labels.as_mut() {
                    l[k] = u8::from(2 * positives > count);
                }
            }
        }
    }

    let mut statics: Vec<Raster> = grid
        .statics()
        .iter()
        .map(|s| Raster::new(s.name.clone(), vec![0.0; cg.n_cells()]))
        .collect();
    for cj in 0..cg.n_lon {
        for ci in 0..cg.n_lat {
            let cells: Vec<(usize, usize)> = block(ci, cj)
                .filter(|&(a, b)| grid.cell_ever_valid(a, b))
                .collect();
            if cells.is_empty() {
                continue;
            }
            let inv = 1.0 / cells.len() as f64;
            for (dst, src) in statics.iter_mut().zip(grid.statics()) {
                dst.values[cg.cell_index(ci, cj)] =
                    cells.iter().map(|&(a, b)| src.values[g.cell_index(a, b)]).sum::<f64>() * inv;
            }
        }
    }

    let out = GridSeries::new(cg, grid.start(), n_time, channels, smi, statics, mask)?;
    match labels {
        Some(l) => out.with_labels(l),
        None => Ok(out),
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random masked grid with one channel and one static raster.
    pub fn random_grid(seed: u64, n_lat: usize, n_lon: usize, n_time: usize, p_valid: f64) -> GridSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geometry = GridGeometry {
            lat_origin: 47.0,
            lon_origin: 6.0,
            cell_size: 0.1,
            n_lat,
            n_lon,
        };
        let n = geometry.n_cells() * n_time;
        let smi = (0..n).map(|_| rng.gen::<f64>()).collect();
        let ch = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let st = (0..geometry.n_cells()).map(|_| rng.gen::<f64>()).collect();
        let mask = (0..n).map(|_| rng.gen_bool(p_valid)).collect();
        GridSeries::new(
            geometry,
            YearMonth::new(2000, 1).unwrap(),
            n_time,
            vec![Raster::new("tp", ch)],
            smi,
            vec![Raster::new("lu0", st)],
            mask,
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::random_grid;
    use super::*;
    use proptest::prelude::*;

    fn tiny(values: [f64; 4], mask: [bool; 4]) -> GridSeries {
        let geometry = GridGeometry {
            lat_origin: 0.0,
            lon_origin: 0.0,
            cell_size: 0.1,
            n_lat: 2,
            n_lon: 2,
        };
        GridSeries::new(
            geometry,
            YearMonth::new(2000, 1).unwrap(),
            1,
            vec![Raster::new("x", values.to_vec())],
            values.iter().map(|v| v / 10.0).collect(),
            vec![],
            mask.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize_smi(0.15, 0.2).unwrap(), 1);
        assert_eq!(binarize_smi(0.20, 0.2).unwrap(), 1);
        assert_eq!(binarize_smi(0.25, 0.2).unwrap(), 0);
        assert!(matches!(binarize_smi(1.5, 0.2), Err(Error::Domain(_))));
        assert!(matches!(binarize_smi(-0.1, 0.2), Err(Error::Domain(_))));
        assert!(binarize_smi(f64::NAN, 0.2).is_err());
        assert!(binarize_smi(0.5, 1.0).is_err());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_smi(0.04).unwrap(), DroughtClass::Extreme);
        assert_eq!(classify_smi(0.01).unwrap(), DroughtClass::Exceptional);
        assert_eq!(classify_smi(0.50).unwrap(), DroughtClass::None);
        assert_eq!(classify_smi(0.0).unwrap(), DroughtClass::Exceptional);
        assert_eq!(classify_smi(0.1).unwrap(), DroughtClass::Severe);
        assert_eq!(classify_smi(0.3).unwrap(), DroughtClass::AbnormallyDry);
        assert!(classify_smi(1.01).is_err());
    }

    #[test]
    fn class_label_consistency_at_boundaries() {
        for v in [0.0, 0.02, 0.05, 0.1, 0.2, 0.2000001, 0.3, 0.3000001, 1.0] {
            let class = classify_smi(v).unwrap();
            let label = binarize_smi(v, DEFAULT_SMI_THRESHOLD).unwrap();
            assert_eq!(class.is_drought(), label == 1, "smi {v}");
        }
    }

    #[test]
    fn coarsen_block_mean() {
        let g = tiny([1.0, 2.0, 3.0, 4.0], [true; 4]);
        let c = coarsen(&g, 2).unwrap();
        assert_eq!(c.n_lat(), 1);
        assert_eq!(c.channels()[0].values[0], 2.5);
        assert!(c.mask()[0]);
        assert!((c.smi()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn coarsen_quorum() {
        let g = tiny([1.0, 2.0, 3.0, 4.0], [true, false, false, false]);
        assert!(!coarsen(&g, 2).unwrap().mask()[0]);
        let g = tiny([1.0, 2.0, 3.0, 4.0], [true, false, false, true]);
        let c = coarsen(&g, 2).unwrap();
        assert!(c.mask()[0]);
        assert_eq!(c.channels()[0].values[0], 2.5);
    }

    #[test]
    fn coarsen_errors() {
        let g = random_grid(1, 4, 5, 3, 1.0);
        assert!(coarsen(&g, 0).is_err());
        assert!(coarsen(&g, 5).is_err());
        assert!(coarsen(&g, 4).is_ok());
    }

    #[test]
    fn coarsen_identity_is_bitwise() {
        let g = random_grid(7, 5, 6, 4, 0.7);
        assert!(coarsen(&g, 1).unwrap().bitwise_eq(&g));
    }

    #[test]
    fn majority_vote_rule() {
        // smi = values / 10 -> 0.1, 0.2, 0.3, 0.4 -> labels 1, 1, 0, 0: tie -> 0
        let g = tiny([1.0, 2.0, 3.0, 4.0], [true; 4]);
        let c = coarsen_with(&g, 2, CoarseLabelRule::MajorityVote(0.2)).unwrap();
        assert_eq!(c.labels().unwrap()[0], 0);
        // mean smi 0.25 -> label 0 as well
        assert_eq!(c.label_at(0, 0, 0, 0.2).unwrap(), 0);
        let g = tiny([1.0, 2.0, 1.5, 4.0], [true; 4]);
        let c = coarsen_with(&g, 2, CoarseLabelRule::MajorityVote(0.2)).unwrap();
        assert_eq!(c.labels().unwrap()[0], 1);
    }

    #[test]
    fn csv_import_masks_missing_rows() {
        let csv = "lat_idx,lon_idx,year,month,smi,tp,static:crop\n\
                   0,0,2000,1,0.1,3.0,0.5\n\
                   0,0,2000,3,0.3,1.0,0.5\n\
                   1,0,2000,2,0.9,2.0,0.25\n";
        let g = GridSeries::from_csv(csv.as_bytes(), 50.0, 8.0, 0.1).unwrap();
        assert_eq!((g.n_lat(), g.n_lon(), g.n_time()), (2, 1, 3));
        assert!(g.is_valid(0, 0, 0) && !g.is_valid(0, 0, 1) && g.is_valid(0, 0, 2));
        assert_eq!(g.channel("tp").unwrap().values[g.index(1, 0, 1)], 2.0);
        assert_eq!(g.statics()[0].values[1], 0.25);
        assert_eq!(g.label_at(0, 0, 0, 0.2).unwrap(), 1);

        let varying = "lat_idx,lon_idx,year,month,smi,static:crop\n0,0,2000,1,0.1,0.5\n0,0,2000,2,0.1,0.6\n";
        assert!(GridSeries::from_csv(varying.as_bytes(), 0.0, 0.0, 0.1).is_err());
        let bad_smi = "lat_idx,lon_idx,year,month,smi\n0,0,2000,1,1.5\n";
        assert!(matches!(
            GridSeries::from_csv(bad_smi.as_bytes(), 0.0, 0.0, 0.1),
            Err(Error::Domain(_))
        ));
    }

    /// Independent per-block recomputation of the coarse positive-label count.
    fn oracle_positive_count(g: &GridSeries, f: usize, th: f64) -> (usize, usize) {
        let (mut pos, mut valid) = (0, 0);
        for t in 0..g.n_time() {
            for bi in 0..g.n_lat().div_ceil(f) {
                for bj in 0..g.n_lon().div_ceil(f) {
                    let mut vals = Vec::new();
                    for a in bi * f..bi * f + f {
                        for b in bj * f..bj * f + f {
                            if a < g.n_lat() && b < g.n_lon() && g.is_valid(a, b, t) {
                                vals.push(g.smi()[g.index(a, b, t)]);
                            }
                        }
                    }
                    if vals.len() * 2 >= f * f {
                        valid += 1;
                        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                        pos += usize::from(mean <= th);
                    }
                }
            }
        }
        (pos, valid)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn constant_block_preserved(c in -100.0f64..100.0, f in 1usize..4) {
            let n = f * 2;
            let geometry = GridGeometry { lat_origin: 0.0, lon_origin: 0.0, cell_size: 0.1, n_lat: n, n_lon: n };
            let len = n * n * 2;
            let g = GridSeries::new(geometry, YearMonth::new(2000, 1).unwrap(), 2,
                vec![Raster::new("x", vec![c; len])], vec![0.5; len], vec![], vec![true; len]).unwrap();
            let cg = coarsen(&g, f).unwrap();
            for v in &cg.channels()[0].values {
                prop_assert!((v - c).abs() <= 1e-12 * c.abs().max(1.0));
            }
        }

        #[test]
        fn coarse_label_frequency_matches_oracle(seed in any::<u64>(), n_lat in 1usize..=8, n_lon in 1usize..=8, f in 1usize..=8) {
            prop_assume!(f <= n_lat && f <= n_lon);
            let g = random_grid(seed, n_lat, n_lon, 3, 0.6);
            let c = coarsen(&g, f).unwrap();
            let (mut pos, mut valid) = (0, 0);
            for t in 0..c.n_time() {
                for j in 0..c.n_lon() {
                    for i in 0..c.n_lat() {
                        if c.is_valid(i, j, t) {
                            valid += 1;
                            pos += c.label_at(i, j, t, 0.2).unwrap() as usize;
                        }
                    }
                }
            }
            prop_assert_eq!((pos, valid), oracle_positive_count(&g, f, 0.2));
        }
    }
}
