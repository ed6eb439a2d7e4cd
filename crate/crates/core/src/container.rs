//! `ARID1` binary container.
//!
//! All integers and floats are little-endian. Layout:
//!
//! ```text
//! magic      5 bytes  "ARID1"
//! kind       u8       b'G' (grid) | b'P' (model parameters)
//! payload    kind-specific
//! ```
//!
//! Grid payload:
//!
//! ```text
//! n_lat, n_lon, n_time                 u32 x 3
//! lat_origin, lon_origin, cell_size    f64 x 3
//! start_year i32, start_month u8
//! n_channels u32, then per channel: name (u32 byte length + UTF-8)
//! n_statics  u32, then per static:  name (u32 byte length + UTF-8)
//! has_labels u8
//! channel rasters   f64 x (n_lat*n_lon*n_time) each, in channel order
//! smi raster        f64 x (n_lat*n_lon*n_time)
//! static rasters    f64 x (n_lat*n_lon) each
//! mask              u8  x (n_lat*n_lon*n_time), 0 or 1
//! labels            u8  x (n_lat*n_lon*n_time), only if has_labels == 1
//! ```
//!
//! Rasters follow the in-memory `(lat, lon, time)` column-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geogrid::{GridGeometry, GridSeries, Raster};
use crate::time::YearMonth;

pub const MAGIC: &[u8; 5] = b"ARID1";
pub const KIND_GRID: u8 = b'G';
pub const KIND_PARAMS: u8 = b'P';

pub(crate) struct Encoder<W: Write> {
    inner: W,
}

impl<W: Write> Encoder<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn header(&mut self, kind: u8) -> Result<()> {
        self.inner.write_all(MAGIC)?;
        self.u8(kind)
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.inner.write_all(&[v])?)
    }

    pub fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    pub fn u64(&mut self, v: usize) -> Result<()> {
        Ok(self.inner.write_all(&(v as u64).to_le_bytes())?)
    }

    pub fn i32(&mut self, v: i32) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    pub fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        Ok(self.inner.write_all(s.as_bytes())?)
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        Ok(self.inner.write_all(b)?)
    }

    pub fn finish(mut self) -> Result<()> {
        Ok(self.inner.flush()?)
    }
}

pub(crate) struct Decoder<R: Read> {
    inner: R,
}

impl<R: Read> Decoder<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    /// Reads the magic and kind byte, failing unless the kind is `expected`.
    pub fn header(&mut self, expected: u8) -> Result<()> {
        let mut magic = [0u8; 5];
        self.inner
            .read_exact(&mut magic)
            .map_err(|_| Error::Format("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let kind = self.u8()?;
        if kind != expected {
            return Err(Error::Format(format!(
                "container kind {:?}, expected {:?}",
                kind as char, expected as char
            )));
        }
        Ok(())
    }

    fn exact<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Format("unexpected end of container".into()))?;
        Ok(buf)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.exact::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.exact()?) as usize)
    }

    pub fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.exact()?) as usize)
    }

    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.exact()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.exact()?))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Format("unexpected end of container".into()))?;
        Ok(buf)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.bytes(n)?).map_err(|e| Error::Format(format!("invalid UTF-8: {e}")))
    }

    /// Fails if any bytes remain.
    pub fn finish(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes after payload".into())),
        }
    }
}

pub fn write_grid<W: Write>(grid: &GridSeries, w: W) -> Result<()> {
    let mut enc = Encoder::new(w);
    enc.header(KIND_GRID)?;
    let g = grid.geometry();
    enc.u32(g.n_lat)?;
    enc.u32(g.n_lon)?;
    enc.u32(grid.n_time())?;
    enc.f64(g.lat_origin)?;
    enc.f64(g.lon_origin)?;
    enc.f64(g.cell_size)?;
    enc.i32(grid.start().year())?;
    enc.u8(grid.start().month())?;
    enc.u32(grid.channels().len())?;
    for c in grid.channels() {
        enc.str(&c.name)?;
    }
    enc.u32(grid.statics().len())?;
    for s in grid.statics() {
        enc.str(&s.name)?;
    }
    enc.u8(u8::from(grid.labels().is_some()))?;
    for c in grid.channels() {
        enc.f64s(&c.values)?;
    }
    enc.f64s(grid.smi())?;
    for s in grid.statics() {
        enc.f64s(&s.values)?;
    }
    let mask: Vec<u8> = grid.mask().iter().map(|&m| u8::from(m)).collect();
    enc.bytes(&mask)?;
    if let Some(labels) = grid.labels() {
        enc.bytes(labels)?;
    }
    enc.finish()
}

pub fn read_grid<R: Read>(r: R) -> Result<GridSeries> {
    let mut dec = Decoder::new(r);
    dec.header(KIND_GRID)?;
    let n_lat = dec.u32()?;
    let n_lon = dec.u32()?;
    let n_time = dec.u32()?;
    let geometry = GridGeometry {
        lat_origin: dec.f64()?,
        lon_origin: dec.f64()?,
        cell_size: dec.f64()?,
        n_lat,
        n_lon,
    };
    let start = YearMonth::new(dec.i32()?, dec.u8()?)?;
    let channel_names = (0..dec.u32()?).map(|_| dec.str()).collect::<Result<Vec<_>>>()?;
    let static_names = (0..dec.u32()?).map(|_| dec.str()).collect::<Result<Vec<_>>>()?;
    let has_labels = match dec.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::Format(format!("bad has_labels flag {v}"))),
    };
    let n = n_lat
        .checked_mul(n_lon)
        .and_then(|c| c.checked_mul(n_time))
        .ok_or_else(|| Error::Format("grid dimensions overflow".into()))?;
    let channels = channel_names
        .into_iter()
        .map(|name| Ok(Raster::new(name, dec.f64s(n)?)))
        .collect::<Result<Vec<_>>>()?;
    let smi = dec.f64s(n)?;
    let statics = static_names
        .into_iter()
        .map(|name| Ok(Raster::new(name, dec.f64s(n_lat * n_lon)?)))
        .collect::<Result<Vec<_>>>()?;
    let mask = dec
        .bytes(n)?
        .into_iter()
        .map(|b| match b {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Format(format!("bad mask byte {v}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = if has_labels { Some(dec.bytes(n)?) } else { None };
    dec.finish()?;
    let grid = GridSeries::new(geometry, start, n_time, channels, smi, statics, mask)?;
    match labels {
        Some(l) => grid.with_labels(l),
        None => Ok(grid),
    }
}

pub fn save_grid(grid: &GridSeries, path: impl AsRef<Path>) -> Result<()> {
    write_grid(grid, BufWriter::new(File::create(path)?))
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<GridSeries> {
    read_grid(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geogrid::test_support::random_grid;
    use crate::geogrid::{coarsen_with, CoarseLabelRule};
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let g = random_grid(3, 2, 3, 4, 0.8);
        let mut buf = Vec::new();
        write_grid(&g, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"ARID1");
        assert_eq!(buf[5], b'G');
        assert_eq!(u32::from_le_bytes(buf[6..10].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[10..14].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[14..18].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(buf[18..26].try_into().unwrap()), 47.0);
        // 1 channel "tp" + 1 static "lu0", 24 cell-months
        let expected = 6 + 12 + 24 + 5 + 4 + 6 + 4 + 7 + 1 + 24 * 8 * 2 + 6 * 8 + 24;
        assert_eq!(buf.len(), expected);
    }

    #[test]
    fn rejects_corruption() {
        let g = random_grid(3, 2, 2, 2, 1.0);
        let mut buf = Vec::new();
        write_grid(&g, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_grid(&bad[..]), Err(Error::Format(_))));
        assert!(matches!(read_grid(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_grid(&long[..]), Err(Error::Format(_))));
        let mut wrong_kind = buf;
        wrong_kind[5] = KIND_PARAMS;
        assert!(read_grid(&wrong_kind[..]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bitwise(seed in any::<u64>(), n_lat in 1usize..6, n_lon in 1usize..6, n_time in 1usize..5, labelled in any::<bool>()) {
            let mut g = random_grid(seed, n_lat, n_lon, n_time, 0.7);
            if labelled {
                g = coarsen_with(&g, 1, CoarseLabelRule::MajorityVote(0.2)).unwrap();
            }
            let mut buf = Vec::new();
            write_grid(&g, &mut buf).unwrap();
            let back = read_grid(&buf[..]).unwrap();
            prop_assert!(back.bitwise_eq(&g));
        }
    }
}
