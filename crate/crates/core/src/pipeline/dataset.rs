//! Sample collections, the QDST on-disk format, and dataset assembly
//! from station records plus satellite tiles.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model::Sample;
use crate::numerics::Tensor;
use crate::pipeline::grid::{self, ChannelMeta, GridTile};
use crate::pipeline::solar;
use crate::pipeline::station::StationRecord;

const DATASET_MAGIC: &[u8; 4] = b"QDST";
const DATASET_VERSION: u32 = 1;

/// A set of training/evaluation samples with shared channel metadata and
/// slice geometry.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub channels: Vec<ChannelMeta>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `[T, C, H, W]` of the slice sequences.
    pub fn dims(&self) -> Result<[usize; 4]> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::Input("dataset has no samples".into()))?;
        let s = first.slices.shape();
        Ok([s[0], s[1], s[2], s[3]])
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims()?;
        if dims[1] != self.channels.len() {
            return Err(Error::Dimension(format!(
                "{} channels of metadata for {} slice channels",
                self.channels.len(),
                dims[1]
            )));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.slices.rank() != 4 || s.slices.shape() != dims {
                return Err(Error::Dimension(format!(
                    "sample {i} has shape {:?}, expected {dims:?}",
                    s.slices.shape()
                )));
            }
            if let Some(t) = s.target_ghi {
                if !t.is_finite() {
                    return Err(Error::Input(format!("sample {i} has non-finite target")));
                }
            }
        }
        Ok(())
    }
}

/// Writes a dataset in the QDST binary format (slices stored as f32,
/// targets as f64 with NaN marking an absent label).
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    let [t_n, c_n, h, w] = ds.dims()?;
    let mut wr = Writer::new();
    wr.magic(DATASET_MAGIC);
    wr.u32(DATASET_VERSION);
    wr.u64(ds.samples.len() as u64);
    wr.u32(t_n as u32);
    wr.u32(c_n as u32);
    wr.u32(h as u32);
    wr.u32(w as u32);
    let meta = serde_json::to_string(&ds.channels)
        .map_err(|e| Error::Input(format!("channel metadata serialization: {e}")))?;
    wr.string(&meta);
    for s in &ds.samples {
        wr.string(&s.station_id);
        wr.u32(s.hour);
        wr.u32(s.day);
        wr.u32(s.month);
        wr.f64(s.altitude);
        wr.f64(s.longitude);
        wr.f64(s.latitude);
        let f32s: Vec<f32> = s.slices.data().iter().map(|&v| v as f32).collect();
        wr.f32_slice(&f32s);
        wr.f64(s.target_ghi.unwrap_or(f64::NAN));
    }
    std::fs::write(path, wr.into_bytes())?;
    Ok(())
}

/// Reads a QDST dataset.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes);
    r.magic(DATASET_MAGIC)?;
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported dataset version {version} (expected {DATASET_VERSION})"),
        });
    }
    let n = r.u64("sample count")? as usize;
    let t_n = r.u32("timesteps")? as usize;
    let c_n = r.u32("channels")? as usize;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let meta_pos = r.pos();
    let meta = r.string("channel metadata")?;
    let channels: Vec<ChannelMeta> = serde_json::from_str(&meta).map_err(|e| Error::Format {
        offset: meta_pos,
        message: format!("channel metadata JSON: {e}"),
    })?;
    if channels.len() != c_n {
        return Err(Error::Format {
            offset: meta_pos,
            message: format!("{} channel entries for C={c_n}", channels.len()),
        });
    }
    let plane = t_n * c_n * h * w;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let station_id = r.string("station id")?;
        let hour = r.u32("hour")?;
        let day = r.u32("day")?;
        let month = r.u32("month")?;
        let altitude = r.f64("altitude")?;
        let longitude = r.f64("longitude")?;
        let latitude = r.f64("latitude")?;
        let raw = r.f32_slice(plane, "slices")?;
        let target = r.f64("target")?;
        samples.push(Sample {
            station_id,
            slices: Tensor::from_vec(&[t_n, c_n, h, w], raw.iter().map(|&v| v as f64).collect())?,
            hour,
            day,
            month,
            altitude,
            longitude,
            latitude,
            target_ghi: if target.is_nan() { None } else { Some(target) },
            normalized: false,
        });
    }
    r.finish()?;
    let ds = Dataset { channels, samples };
    ds.validate()?;
    Ok(ds)
}

/// Options for [`build_dataset`].
#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Skip records whose hour has zero extraterrestrial irradiance at the
    /// station location.
    pub daylight_only: bool,
    /// Drop samples flagged by the slice fault detector.
    pub drop_faulty: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            daylight_only: false,
            drop_faulty: true,
        }
    }
}

/// Counts of what happened to each station record during assembly.
#[derive(Debug, Clone, Default, Serialize)]
pub struct BuildReport {
    pub built: usize,
    pub missing_frames: usize,
    pub faulty_slices: usize,
    pub night_skipped: usize,
    pub out_of_domain: usize,
    pub outside_grid: usize,
}

/// Joins QC-passed station records with satellite tiles into labeled
/// samples: each record's hour contributes its six 10-minute frames.
pub fn build_dataset(
    stations: &[StationRecord],
    tiles: &[GridTile],
    opts: &BuildOptions,
) -> Result<(Dataset, BuildReport)> {
    let channels = match tiles.first() {
        Some(t) => t.channels.clone(),
        None => return Err(Error::Input("no tiles supplied".into())),
    };
    for (i, t) in tiles.iter().enumerate() {
        if t.channels != channels {
            return Err(Error::Input(format!(
                "tile {i} channel metadata differs from tile 0"
            )));
        }
    }

    // Index frames by their hour label.
    let mut by_hour: BTreeMap<chrono::DateTime<chrono::Utc>, Vec<&GridTile>> = BTreeMap::new();
    for t in tiles {
        by_hour
            .entry(solar::truncate_to_hour(t.timestamp))
            .or_default()
            .push(t);
    }
    for frames in by_hour.values_mut() {
        frames.sort_by_key(|t| t.timestamp);
    }

    let mut report = BuildReport::default();
    let mut samples = Vec::new();
    for st in stations {
        if !st.in_domain() {
            report.out_of_domain += 1;
            continue;
        }
        if opts.daylight_only
            && solar::extraterrestrial_ghi(st.timestamp, st.latitude, st.longitude)? == 0.0
        {
            report.night_skipped += 1;
            continue;
        }
        let hour = solar::truncate_to_hour(st.timestamp);
        let Some(frames) = by_hour.get(&hour) else {
            report.missing_frames += 1;
            continue;
        };
        let owned: Vec<GridTile> = frames.iter().map(|t| (*t).clone()).collect();
        match grid::build_sample(&owned, st) {
            Ok(s) => {
                if opts.drop_faulty && grid::detect_faulty_sample(&s, &channels)? {
                    report.faulty_slices += 1;
                } else {
                    report.built += 1;
                    samples.push(s);
                }
            }
            Err(Error::Gap(_)) => report.missing_frames += 1,
            Err(Error::Bounds(_)) => report.outside_grid += 1,
            Err(e) => return Err(e),
        }
    }

    Ok((Dataset { channels, samples }, report))
}
