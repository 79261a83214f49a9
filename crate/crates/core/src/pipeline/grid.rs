//! Satellite grid tiles, the QTIL exchange format, slice extraction, and
//! sample assembly.
//!
//! A tile is one 10-minute frame of the satellite grid: `C` channels over
//! an `Hg×Wg` lattice of 0.02° cells. `origin_lat`/`origin_lon` give the
//! center of the cell at row 0, column 0; rows advance southward and
//! columns eastward. Station slices are the 7×7 window of cells centered
//! on the cell containing the station.

use std::path::Path;

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model::Sample;
use crate::numerics::Tensor;
use crate::pipeline::station::StationRecord;

/// Side length of the square window extracted around a station or grid
/// cell.
pub const SLICE_SIZE: usize = 7;

/// Number of 10-minute frames per labeled hour.
pub const FRAMES_PER_HOUR: usize = 6;

const TILE_MAGIC: &[u8; 4] = b"QTIL";
const TILE_VERSION: u32 = 1;

/// Physical quantity a channel carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    /// Reflectance in percent, valid range [0, 100].
    Albedo,
    /// Brightness temperature in Kelvin, valid range [150, 400].
    Bt,
}

impl ChannelKind {
    pub fn valid_range(self) -> (f64, f64) {
        match self {
            ChannelKind::Albedo => (0.0, 100.0),
            ChannelKind::Bt => (150.0, 400.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMeta {
    pub id: String,
    pub kind: ChannelKind,
}

/// The standard 16-channel layout of the source satellite: B01–B06 albedo,
/// B07–B16 brightness temperature.
pub fn standard_channels() -> Vec<ChannelMeta> {
    (1..=16)
        .map(|i| ChannelMeta {
            id: format!("B{i:02}"),
            kind: if i <= 6 {
                ChannelKind::Albedo
            } else {
                ChannelKind::Bt
            },
        })
        .collect()
}

/// One 10-minute satellite frame over the study grid.
#[derive(Debug, Clone)]
pub struct GridTile {
    pub timestamp: DateTime<Utc>,
    pub channels: Vec<ChannelMeta>,
    /// `[C, Hg, Wg]`, row 0 at `origin_lat` (north), column 0 at
    /// `origin_lon` (west).
    pub values: Tensor,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell_size: f64,
}

impl GridTile {
    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.values.shape()[0],
            self.values.shape()[1],
            self.values.shape()[2],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.rank() != 3 {
            return Err(Error::Dimension(format!(
                "tile values must be [C, Hg, Wg], got {:?}",
                self.values.shape()
            )));
        }
        if self.values.shape()[0] != self.channels.len() {
            return Err(Error::Dimension(format!(
                "{} channels of metadata for {} value planes",
                self.channels.len(),
                self.values.shape()[0]
            )));
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::Config(format!(
                "cell size must be positive, got {}",
                self.cell_size
            )));
        }
        Ok(())
    }

    /// Nearest-cell mapping from coordinates to (row, col).
    pub fn cell_index(&self, latitude: f64, longitude: f64) -> Result<(usize, usize)> {
        let (_, hg, wg) = self.dims();
        let row = ((self.origin_lat - latitude) / self.cell_size).round();
        let col = ((longitude - self.origin_lon) / self.cell_size).round();
        if row < 0.0 || col < 0.0 || row >= hg as f64 || col >= wg as f64 {
            return Err(Error::Bounds(format!(
                "({latitude}, {longitude}) maps to cell ({row}, {col}) outside {hg}x{wg}"
            )));
        }
        Ok((row as usize, col as usize))
    }

    /// Coordinates of a cell center.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_lat - row as f64 * self.cell_size,
            self.origin_lon + col as f64 * self.cell_size,
        )
    }
}

/// Extracts the 7×7 window (all channels) whose center cell contains the
/// given coordinates.
pub fn extract_slice(tile: &GridTile, latitude: f64, longitude: f64) -> Result<Tensor> {
    let (r, c) = tile.cell_index(latitude, longitude)?;
    extract_slice_at(tile, r, c)
}

/// Extracts the 7×7 window centered on a cell given by row/column index.
pub fn extract_slice_at(tile: &GridTile, row: usize, col: usize) -> Result<Tensor> {
    let (cn, hg, wg) = tile.dims();
    let half = SLICE_SIZE / 2;
    if row < half || col < half || row + half >= hg || col + half >= wg {
        return Err(Error::Bounds(format!(
            "7x7 window at cell ({row}, {col}) exceeds the {hg}x{wg} tile"
        )));
    }
    let mut out = Tensor::zeros(&[cn, SLICE_SIZE, SLICE_SIZE]);
    let src = tile.values.data();
    let dst = out.data_mut();
    for ch in 0..cn {
        for i in 0..SLICE_SIZE {
            let sr = row - half + i;
            let s0 = (ch * hg + sr) * wg + (col - half);
            let d0 = (ch * SLICE_SIZE + i) * SLICE_SIZE;
            dst[d0..d0 + SLICE_SIZE].copy_from_slice(&src[s0..s0 + SLICE_SIZE]);
        }
    }
    Ok(out)
}

/// Stacks the six 10-minute frames of one labeled hour into a training
/// sample for the given station.
///
/// The tiles must be exactly the frames at :00, :10, …, :50 of the hour,
/// in time order; anything else is a gap/order error naming the offending
/// timestamp.
pub fn build_sample(tiles: &[GridTile], station: &StationRecord) -> Result<Sample> {
    if tiles.len() != FRAMES_PER_HOUR {
        return Err(Error::Gap(format!(
            "expected {FRAMES_PER_HOUR} frames for the hour, got {}",
            tiles.len()
        )));
    }
    let label = crate::pipeline::solar::truncate_to_hour(station.timestamp);
    for (k, tile) in tiles.iter().enumerate() {
        let want = label + Duration::minutes(10 * k as i64);
        if tile.timestamp != want {
            return Err(Error::Gap(format!(
                "frame {k} of hour {label}: expected {want}, found {}",
                tile.timestamp
            )));
        }
        if tile.channels != tiles[0].channels {
            return Err(Error::Input(format!(
                "frame {k} channel metadata differs from frame 0"
            )));
        }
    }

    let (cn, _, _) = tiles[0].dims();
    let mut slices = Tensor::zeros(&[FRAMES_PER_HOUR, cn, SLICE_SIZE, SLICE_SIZE]);
    let plane = cn * SLICE_SIZE * SLICE_SIZE;
    for (k, tile) in tiles.iter().enumerate() {
        let s = extract_slice(tile, station.latitude, station.longitude)?;
        slices.data_mut()[k * plane..(k + 1) * plane].copy_from_slice(s.data());
    }

    Ok(Sample {
        station_id: station.station_id.clone(),
        slices,
        hour: label.hour(),
        day: label.day(),
        month: label.month(),
        altitude: station.altitude,
        longitude: station.longitude,
        latitude: station.latitude,
        target_ghi: Some(station.ghi),
        normalized: false,
    })
}

/// Thresholds for [`detect_faulty_sample`]; the defaults encode the
/// physical ranges of the two channel kinds.
#[derive(Debug, Clone)]
pub struct FaultCriteria {
    pub albedo_range: (f64, f64),
    pub bt_range: (f64, f64),
    /// Also flag a channel that is constant at a range endpoint across the
    /// whole slice sequence (a stuck/sentinel plane).
    pub sentinel_check: bool,
}

impl Default for FaultCriteria {
    fn default() -> Self {
        FaultCriteria {
            albedo_range: ChannelKind::Albedo.valid_range(),
            bt_range: ChannelKind::Bt.valid_range(),
            sentinel_check: true,
        }
    }
}

/// True if the sample's slices contain non-finite values, violate the
/// physical range of their channel kind, or (optionally) a channel is
/// frozen at a range endpoint across the entire sequence.
pub fn detect_faulty_sample(s: &Sample, channels: &[ChannelMeta]) -> Result<bool> {
    detect_faulty_sample_with(s, channels, &FaultCriteria::default())
}

pub fn detect_faulty_sample_with(
    s: &Sample,
    channels: &[ChannelMeta],
    criteria: &FaultCriteria,
) -> Result<bool> {
    if s.slices.rank() != 4 {
        return Err(Error::Dimension(format!(
            "sample slices must be [T, C, H, W], got {:?}",
            s.slices.shape()
        )));
    }
    let (t_n, c_n, h, w) = (
        s.slices.shape()[0],
        s.slices.shape()[1],
        s.slices.shape()[2],
        s.slices.shape()[3],
    );
    if c_n != channels.len() {
        return Err(Error::Dimension(format!(
            "{} channels of metadata for {} slice channels",
            channels.len(),
            c_n
        )));
    }
    let hw = h * w;
    let data = s.slices.data();
    for (ci, meta) in channels.iter().enumerate() {
        let (lo, hi) = match meta.kind {
            ChannelKind::Albedo => criteria.albedo_range,
            ChannelKind::Bt => criteria.bt_range,
        };
        let mut constant = true;
        let first = data[ci * hw];
        for t in 0..t_n {
            let base = (t * c_n + ci) * hw;
            for &v in &data[base..base + hw] {
                if !v.is_finite() || v < lo || v > hi {
                    return Ok(true);
                }
                if v != first {
                    constant = false;
                }
            }
        }
        if criteria.sentinel_check && constant && (first == lo || first == hi) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Writes a tile in the QTIL binary format (values stored as f32).
pub fn write_tile(path: &Path, tile: &GridTile) -> Result<()> {
    tile.validate()?;
    let (cn, hg, wg) = tile.dims();
    let mut w = Writer::new();
    w.magic(TILE_MAGIC);
    w.u32(TILE_VERSION);
    w.string(
        &tile
            .timestamp
            .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    );
    w.u32(cn as u32);
    w.u32(hg as u32);
    w.u32(wg as u32);
    w.f64(tile.origin_lat);
    w.f64(tile.origin_lon);
    w.f64(tile.cell_size);
    let meta = serde_json::to_string(&tile.channels)
        .map_err(|e| Error::Input(format!("channel metadata serialization: {e}")))?;
    w.string(&meta);
    let f32s: Vec<f32> = tile.values.data().iter().map(|&v| v as f32).collect();
    w.f32_slice(&f32s);
    std::fs::write(path, w.into_bytes())?;
    Ok(())
}

/// Reads a QTIL tile.
pub fn read_tile(path: &Path) -> Result<GridTile> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes);
    r.magic(TILE_MAGIC)?;
    let version = r.u32("version")?;
    if version != TILE_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported tile version {version} (expected {TILE_VERSION})"),
        });
    }
    let ts_pos = r.pos();
    let ts = r.string("timestamp")?;
    let timestamp = DateTime::parse_from_rfc3339(&ts)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Format {
            offset: ts_pos,
            message: format!("bad timestamp {ts:?}: {e}"),
        })?;
    let cn = r.u32("channel count")? as usize;
    let hg = r.u32("grid height")? as usize;
    let wg = r.u32("grid width")? as usize;
    let origin_lat = r.f64("origin_lat")?;
    let origin_lon = r.f64("origin_lon")?;
    let cell_size = r.f64("cell_size")?;
    let meta_pos = r.pos();
    let meta = r.string("channel metadata")?;
    let channels: Vec<ChannelMeta> = serde_json::from_str(&meta).map_err(|e| Error::Format {
        offset: meta_pos,
        message: format!("channel metadata JSON: {e}"),
    })?;
    if channels.len() != cn {
        return Err(Error::Format {
            offset: meta_pos,
            message: format!("{} channel entries for C={cn}", channels.len()),
        });
    }
    let values = r.f32_slice(cn * hg * wg, "values")?;
    r.finish()?;
    let tile = GridTile {
        timestamp,
        channels,
        values: Tensor::from_vec(&[cn, hg, wg], values.iter().map(|&v| v as f64).collect())?,
        origin_lat,
        origin_lon,
        cell_size,
    };
    tile.validate()?;
    Ok(tile)
}
