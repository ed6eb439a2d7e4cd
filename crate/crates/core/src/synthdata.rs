//! Synthetic climate forcing and soil moisture from a single-bucket water
//! balance, with SMI taken as the empirical CDF of soil moisture within each
//! cell and calendar month.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geogrid::{GridGeometry, GridSeries, Raster};
use crate::time::YearMonth;

/// Emitted channel names, in raster order.
pub const CHANNELS: [&str; 12] = [
    "u10", "v10", "tp", "sp", "t2m", "ssrd", "d2m", "ssr", "str", "lai_lv", "lai_hv", "strd",
];
pub const N_LAND_USE: usize = 18;
/// Fewest months accepted by [`derive_smi`] and [`simulate`].
pub const MIN_MONTHS: usize = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BucketParams {
    /// Storage capacity, mm.
    pub s_max: f64,
    /// Evapotranspiration per degree above `t0` at full storage, mm/month.
    pub k_e: f64,
    pub t0: f64,
    /// Runoff at full storage, mm/month.
    pub runoff: f64,
    pub gamma: f64,
    /// Mean monthly precipitation, mm.
    pub p_mean: f64,
    /// Relative seasonal precipitation amplitude.
    pub p_amplitude: f64,
    /// Calendar month of peak precipitation (fractional).
    pub p_peak: f64,
    pub t_mean: f64,
    pub t_amplitude: f64,
    pub t_peak: f64,
    /// Temperature change per latitude row, °C.
    pub t_lat_gradient: f64,
    /// Spatial correlation length of the regional anomalies, cells.
    pub correlation_length: f64,
    pub noise_scale: f64,
    /// AR(1) coefficient of the regional anomalies.
    pub persistence: f64,
    /// Variance share of cell-local noise in the anomalies.
    pub local_share: f64,
    pub spinup_months: usize,
    pub seed: u64,
}

impl Default for BucketParams {
    fn default() -> Self {
        Self {
            s_max: 200.0,
            k_e: 4.0,
            t0: 0.0,
            runoff: 30.0,
            gamma: 2.0,
            p_mean: 60.0,
            p_amplitude: 0.35,
            p_peak: 6.0,
            t_mean: 9.0,
            t_amplitude: 9.0,
            t_peak: 7.0,
            t_lat_gradient: -0.15,
            correlation_length: 6.0,
            noise_scale: 1.0,
            persistence: 0.5,
            local_share: 0.3,
            spinup_months: 36,
            seed: 42,
        }
    }
}

impl BucketParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_max > 0.0 && self.s_max.is_finite()) {
            return Err(Error::argument("s_max must be positive"));
        }
        let non_negative = [
            ("k_e", self.k_e),
            ("runoff", self.runoff),
            ("gamma", self.gamma),
            ("p_mean", self.p_mean),
            ("noise_scale", self.noise_scale),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::argument(format!("{name} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.p_amplitude) {
            return Err(Error::argument("p_amplitude must lie in [0, 1]"));
        }
        if !(self.correlation_length > 0.0) {
            return Err(Error::argument("correlation_length must be positive"));
        }
        if !(0.0..1.0).contains(&self.persistence) || !(0.0..=1.0).contains(&self.local_share) {
            return Err(Error::argument("persistence must lie in [0, 1), local_share in [0, 1]"));
        }
        Ok(())
    }
}

/// One water-balance month. Returns `(storage at month end, E, R)`.
pub fn bucket_step(params: &BucketParams, s: f64, precip: f64, temp: f64) -> (f64, f64, f64) {
    let fill = s / params.s_max;
    let e = params.k_e * (temp - params.t0).max(0.0) * fill;
    let r = params.runoff * fill.powf(params.gamma);
    ((s + precip - e - r).clamp(0.0, params.s_max), e, r)
}

/// Empirical-CDF index of a monthly series starting at `start`: each value's
/// rank among the same calendar month, over `n + 1`. Ties rank by time.
pub fn derive_smi(soil: &[f64], start: YearMonth) -> Result<Vec<f64>> {
    if soil.len() < MIN_MONTHS {
        return Err(Error::data(format!(
            "{} months is too short for a climatology, need {MIN_MONTHS}",
            soil.len()
        )));
    }
    if let Some((i, v)) = soil.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::data(format!("non-finite soil moisture {v} at month {i}")));
    }
    let mut smi = vec![0.0; soil.len()];
    let offset = start.month() as usize - 1;
    for m in 0..12 {
        let first = (12 + m - offset) % 12;
        let mut idx: Vec<usize> = (first..soil.len()).step_by(12).collect();
        let n = idx.len();
        idx.sort_by(|&a, &b| soil[a].total_cmp(&soil[b]).then(a.cmp(&b)));
        for (rank, &i) in idx.iter().enumerate() {
            smi[i] = (rank + 1) as f64 / (n + 1) as f64;
        }
    }
    Ok(smi)
}

/// Ellipse inscribed in the grid, as a per-cell land mask.
pub fn default_mask(n_lat: usize, n_lon: usize) -> Vec<bool> {
    let (a, b) = (n_lat as f64 / 2.0, n_lon as f64 / 2.0);
    let mut mask = vec![false; n_lat * n_lon];
    for j in 0..n_lon {
        for i in 0..n_lat {
            let y = (i as f64 + 0.5 - a) / a;
            let x = (j as f64 + 0.5 - b) / b;
            mask[i + n_lat * j] = x * x + y * y <= 1.0;
        }
    }
    mask
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_lat: usize,
    pub n_lon: usize,
    pub n_months: usize,
    pub start: YearMonth,
    pub lat_origin: f64,
    pub lon_origin: f64,
    pub cell_size: f64,
    pub params: BucketParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_lat: 20,
            n_lon: 20,
            n_months: 456,
            start: YearMonth::new(1981, 1).expect("valid month"),
            lat_origin: 47.0,
            lon_origin: 6.0,
            cell_size: 0.1,
            params: BucketParams::default(),
        }
    }
}

impl SynthConfig {
    pub fn generate(&self) -> Result<GridSeries> {
        let geometry = GridGeometry {
            lat_origin: self.lat_origin,
            lon_origin: self.lon_origin,
            cell_size: self.cell_size,
            n_lat: self.n_lat,
            n_lon: self.n_lon,
        };
        simulate(&self.params, geometry, self.start, self.n_months, &default_mask(self.n_lat, self.n_lon))
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// AR(1) anomaly fields on a coarse anchor lattice; cells blend nearby anchors.
struct RegionalNoise {
    weights: Vec<Vec<(usize, f64)>>,
    /// `[time][anchor]` for precipitation and temperature.
    p: Vec<Vec<f64>>,
    t: Vec<Vec<f64>>,
}

impl RegionalNoise {
    fn new(params: &BucketParams, n_lat: usize, n_lon: usize, n_steps: usize, rng: &mut ChaCha8Rng) -> Self {
        let l = params.correlation_length;
        let axis = |n: usize| -> Vec<f64> {
            let count = (n as f64 / l).ceil() as usize + 3;
            (0..count).map(|k| (k as f64 - 1.0) * l).collect()
        };
        let (ai, aj) = (axis(n_lat), axis(n_lon));
        let anchors: Vec<(f64, f64)> = aj.iter().flat_map(|&y| ai.iter().map(move |&x| (x, y))).collect();
        let weights = (0..n_lat * n_lon)
            .map(|c| {
                let (i, j) = ((c % n_lat) as f64, (c / n_lat) as f64);
                let raw: Vec<(usize, f64)> = anchors
                    .iter()
                    .enumerate()
                    .map(|(a, &(x, y))| {
                        let d2 = (i - x).powi(2) + (j - y).powi(2);
                        (a, (-d2 / (2.0 * l * l)).exp())
                    })
                    .filter(|&(_, w)| w > 1e-6)
                    .collect();
                let norm = raw.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
                raw.into_iter().map(|(a, w)| (a, w / norm)).collect()
            })
            .collect();
        let phi = params.persistence;
        let innovation = (1.0 - phi * phi).sqrt();
        let field = |rng: &mut ChaCha8Rng| {
            let mut out = Vec::with_capacity(n_steps);
            let mut z: Vec<f64> = (0..anchors.len()).map(|_| gaussian(rng)).collect();
            for _ in 0..n_steps {
                for v in &mut z {
                    *v = phi * *v + innovation * gaussian(rng);
                }
                out.push(z.clone());
            }
            out
        };
        let p = field(rng);
        let t = field(rng);
        Self { weights, p, t }
    }

    fn at(&self, cell: usize, step: usize) -> (f64, f64) {
        self.weights[cell].iter().fold((0.0, 0.0), |(p, t), &(a, w)| {
            (p + w * self.p[step][a], t + w * self.t[step][a])
        })
    }
}

struct CellSeries {
    channels: Vec<Vec<f64>>,
    soil: Vec<f64>,
}

fn seasonal(month: u8, peak: f64) -> f64 {
    (2.0 * PI * (month as f64 - peak) / 12.0).cos()
}

fn simulate_cell(
    params: &BucketParams,
    regional: &RegionalNoise,
    cell: usize,
    lat_row: f64,
    start: YearMonth,
    n_months: usize,
) -> CellSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(cell as u64 + 1);
    let f = params.local_share;
    let (reg, loc) = ((1.0 - f).sqrt(), f.sqrt());
    let sigma_p = 0.6 * params.noise_scale;
    let sigma_t = 1.5 * params.noise_scale;
    let ns = params.noise_scale;
    let spin = params.spinup_months;
    let first = start.add_months(-(spin as i64));

    let mut channels = vec![Vec::with_capacity(n_months); CHANNELS.len()];
    let mut soil = Vec::with_capacity(n_months);
    let mut s = params.s_max / 2.0;
    let mut s_lag2 = s;
    for step in 0..spin + n_months {
        let month = first.add_months(step as i64).month();
        let (rp, rt) = regional.at(cell, step);
        let xi_p = reg * rp + loc * gaussian(&mut rng);
        let xi_t = -0.5 * xi_p + 0.75f64.sqrt() * (reg * rt + loc * gaussian(&mut rng));
        let precip = params.p_mean
            * (1.0 + params.p_amplitude * seasonal(month, params.p_peak))
            * (sigma_p * xi_p - sigma_p * sigma_p / 2.0).exp();
        let temp = params.t_mean
            + params.t_lat_gradient * lat_row
            + params.t_amplitude * seasonal(month, params.t_peak)
            + sigma_t * xi_t;
        let fill_start = s / params.s_max;
        let fill_lag2 = s_lag2 / params.s_max;
        let (next, _, _) = bucket_step(params, s, precip, temp);
        s_lag2 = s;
        s = next;
        if step < spin {
            continue;
        }
        let mut noise = || ns * gaussian(&mut rng);
        let sun = seasonal(month, 6.5);
        let ssrd = (150.0 + 100.0 * sun) * (1.0 - 0.12 * xi_p) + 10.0 * noise();
        let t2m = temp + 273.15;
        let values = [
            1.0 + 0.8 * xi_p + 1.2 * noise(),
            -0.5 + 0.4 * xi_t + 1.2 * noise(),
            precip,
            96_000.0 - 250.0 * xi_p + 40.0 * lat_row + 100.0 * noise(),
            t2m,
            ssrd,
            t2m - 2.0 - 5.0 * (1.0 - fill_start) + 0.6 * noise(),
            0.8 * ssrd + 5.0 * noise(),
            -55.0 - 25.0 * (1.0 - fill_start) + 5.0 * noise(),
            0.8 + 1.6 * fill_start + 0.6 * (sun + 1.0) + 0.2 * noise(),
            2.0 + 1.2 * fill_lag2 + 0.4 * (sun + 1.0) + 0.2 * noise(),
            290.0 + 4.0 * temp + 15.0 * xi_p + 5.0 * noise(),
        ];
        for (ch, v) in channels.iter_mut().zip(values) {
            ch.push(v);
        }
        soil.push(s);
    }
    CellSeries { channels, soil }
}

/// Run the bucket model on every cell of `geometry`.
///
/// Returns a grid whose SMI is [`derive_smi`] of the month-end storage, with
/// [`CHANNELS`] as dynamic inputs and `N_LAND_USE` land-use fractions
/// (`lu00`, …) as statics. `mask` is per cell and applies to all months.
pub fn simulate(
    params: &BucketParams,
    geometry: GridGeometry,
    start: YearMonth,
    n_months: usize,
    mask: &[bool],
) -> Result<GridSeries> {
    params.validate()?;
    let n_cells = geometry.n_cells();
    if n_cells == 0 {
        return Err(Error::argument("grid dimensions must be non-zero"));
    }
    if mask.len() != n_cells {
        return Err(Error::argument(format!("mask has {} cells, expected {n_cells}", mask.len())));
    }
    if n_months < MIN_MONTHS {
        return Err(Error::argument(format!("need at least {MIN_MONTHS} months, got {n_months}")));
    }
    let (n_lat, n_lon) = (geometry.n_lat, geometry.n_lon);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let regional = RegionalNoise::new(params, n_lat, n_lon, params.spinup_months + n_months, &mut rng);
    let statics = land_use(n_cells, &mut rng);

    let cells: Vec<CellSeries> = (0..n_cells)
        .into_par_iter()
        .map(|c| {
            let lat_row = (c % n_lat) as f64 - n_lat as f64 / 2.0;
            simulate_cell(params, &regional, c, lat_row, start, n_months)
        })
        .collect();

    let n = n_cells * n_months;
    let mut channels: Vec<Vec<f64>> = vec![vec![0.0; n]; CHANNELS.len()];
    let mut smi = vec![0.0; n];
    for (c, series) in cells.iter().enumerate() {
        let index = derive_smi(&series.soil, start)?;
        for t in 0..n_months {
            let k = c + n_cells * t;
            smi[k] = index[t];
            for (dst, src) in channels.iter_mut().zip(&series.channels) {
                dst[k] = src[t];
            }
        }
    }
    let full_mask: Vec<bool> = (0..n).map(|k| mask[k % n_cells]).collect();
    let channels = CHANNELS.iter().zip(channels).map(|(name, v)| Raster::new(*name, v)).collect();
    GridSeries::new(geometry, start, n_months, channels, smi, statics, full_mask)
}

/// Per-cell fractions drawn uniformly from the simplex.
fn land_use(n_cells: usize, rng: &mut ChaCha8Rng) -> Vec<Raster> {
    let per_cell: Vec<Vec<f64>> = (0..n_cells)
        .map(|_| {
            let draws: Vec<f64> = (0..N_LAND_USE).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = draws.iter().sum();
            draws.into_iter().map(|d| d / total).collect()
        })
        .collect();
    (0..N_LAND_USE)
        .map(|k| Raster::new(format!("lu{k:02}"), per_cell.iter().map(|c| c[k]).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{aggregate_lags, spearman_lag};
    use proptest::prelude::*;

    fn small() -> GridSeries {
        SynthConfig {
            n_lat: 8,
            n_lon: 8,
            n_months: 240,
            ..SynthConfig::default()
        }
        .generate()
        .unwrap()
    }

    #[test]
    fn closed_bucket_is_conserved() {
        let p = BucketParams {
            k_e: 0.0,
            runoff: 0.0,
            ..BucketParams::default()
        };
        let (s, e, r) = bucket_step(&p, 123.0, 0.0, 25.0);
        assert_eq!((s, e, r), (123.0, 0.0, 0.0));
    }

    #[test]
    fn drying_without_rain_is_monotone() {
        let p = BucketParams::default();
        let mut s = p.s_max;
        for month in 0..120 {
            let (next, _, _) = bucket_step(&p, s, 0.0, 15.0 + (month % 12) as f64);
            assert!(next <= s);
            s = next;
        }
        assert!(s < p.s_max);
    }

    #[test]
    fn smi_examples() {
        // 9 Januaries, one of each other month, starting in January
        let mut soil: Vec<f64> = (0..108).map(|i| 50.0 + (i % 12) as f64).collect();
        let januaries = [5.0, 9.0, 1.0, 7.0, 3.0, 8.0, 2.0, 6.0, 4.0];
        for (y, v) in januaries.iter().enumerate() {
            soil[12 * y] = *v;
        }
        let start = YearMonth::new(2000, 1).unwrap();
        let smi = derive_smi(&soil, start).unwrap();
        assert_eq!(smi[24], 0.1);
        assert_eq!(smi[0], 0.5);
        assert_eq!(smi[12], 0.9);
        assert!(matches!(derive_smi(&soil[..59], start), Err(Error::Data(_))));
    }

    #[test]
    fn smi_respects_start_month() {
        let soil: Vec<f64> = (0..72).map(|i| i as f64).collect();
        let smi = derive_smi(&soil, YearMonth::new(2000, 4).unwrap()).unwrap();
        // increasing series: the last of each calendar month ranks highest
        assert_eq!(smi[71], 6.0 / 7.0);
        assert_eq!(smi[0], 1.0 / 7.0);
    }

    #[test]
    fn degenerate_params_are_rejected() {
        let geometry = GridGeometry {
            lat_origin: 0.0,
            lon_origin: 0.0,
            cell_size: 1.0,
            n_lat: 2,
            n_lon: 2,
        };
        let start = YearMonth::new(2000, 1).unwrap();
        let bad = BucketParams {
            s_max: 0.0,
            ..BucketParams::default()
        };
        assert!(matches!(simulate(&bad, geometry, start, 60, &[true; 4]), Err(Error::Argument(_))));
        assert!(simulate(&BucketParams::default(), geometry, start, 59, &[true; 4]).is_err());
    }

    #[test]
    fn smi_is_a_permutation_of_plotting_positions() {
        let g = small();
        let n_years = g.n_time() / 12;
        for c in 0..g.n_lat() * g.n_lon() {
            for m in 0..12 {
                let mut vals: Vec<f64> = (m..g.n_time()).step_by(12).map(|t| g.smi()[c + g.n_lat() * g.n_lon() * t]).collect();
                vals.sort_by(f64::total_cmp);
                let expected: Vec<f64> = (1..=n_years).map(|i| i as f64 / (n_years + 1) as f64).collect();
                assert_eq!(vals, expected);
            }
        }
    }

    #[test]
    fn same_seed_same_grid() {
        assert!(small().bitwise_eq(&small()));
        let other = SynthConfig {
            n_lat: 8,
            n_lon: 8,
            n_months: 240,
            params: BucketParams {
                seed: 7,
                ..BucketParams::default()
            },
            ..SynthConfig::default()
        }
        .generate()
        .unwrap();
        assert!(!small().bitwise_eq(&other));
    }

    #[test]
    fn land_use_is_a_simplex() {
        let g = small();
        assert_eq!(g.statics().len(), N_LAND_USE);
        for c in 0..64 {
            let total: f64 = g.statics().iter().map(|r| r.values[c]).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    fn cell_series(g: &GridSeries, values: &[f64], c: usize) -> Vec<f64> {
        let n_cells = g.n_lat() * g.n_lon();
        (0..g.n_time()).map(|t| values[c + n_cells * t]).collect()
    }

    #[test]
    fn lag_structure() {
        let g = small();
        let tp = &g.channel("tp").unwrap().values;
        let cells: Vec<usize> = (0..64).filter(|&c| g.mask()[c]).collect();
        let auto: Vec<_> = cells
            .iter()
            .map(|&c| {
                let s = cell_series(&g, g.smi(), c);
                spearman_lag(&s, &s, 6).unwrap()
            })
            .collect();
        let auto = aggregate_lags(&auto);
        let means: Vec<f64> = auto.lags.iter().map(|l| l.mean.unwrap()).collect();
        assert!((means[0] - 1.0).abs() < 1e-12);
        for w in means.windows(2) {
            assert!(w[1] < w[0], "{means:?}");
        }
        assert!(means[6] > 0.0, "{means:?}");

        let cross: Vec<_> = cells
            .iter()
            .map(|&c| spearman_lag(&cell_series(&g, tp, c), &cell_series(&g, g.smi(), c), 2).unwrap())
            .collect();
        for l in aggregate_lags(&cross).lags {
            assert!(l.mean.unwrap() > 0.0, "{l:?}");
        }
    }

    #[test]
    fn label_frequency_is_realistic() {
        let g = small();
        let (mut pos, mut n) = (0usize, 0usize);
        for (&v, &ok) in g.smi().iter().zip(g.mask()) {
            if ok {
                n += 1;
                pos += usize::from(v <= 0.2);
            }
        }
        let f = pos as f64 / n as f64;
        assert!((0.15..=0.25).contains(&f), "{f}");
    }

    proptest! {
        #[test]
        fn storage_stays_bounded(
            s0 in 0.0f64..=1.0,
            inputs in prop::collection::vec((0.0f64..400.0, -20.0f64..40.0), 1..60),
            k_e in 0.0f64..20.0,
            runoff in 0.0f64..200.0,
            gamma in 0.1f64..4.0,
        ) {
            let p = BucketParams { k_e, runoff, gamma, ..BucketParams::default() };
            let mut s = s0 * p.s_max;
            for (precip, temp) in inputs {
                s = bucket_step(&p, s, precip, temp).0;
                prop_assert!((0.0..=p.s_max).contains(&s));
            }
        }
    }
}
