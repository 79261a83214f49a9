//! Grid-wide hourly GHI estimation and temporal integration to monthly,
//! quarterly, and annual energy maps.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate, SecondsFormat, TimeZone, Timelike, Utc};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Model, Sample};
use crate::numerics::Tensor;
use crate::pipeline::grid::{self, GridTile, FRAMES_PER_HOUR, SLICE_SIZE};

/// A georeferenced raster over the study grid: hourly GHI in W/m² or
/// integrated energy in kWh/m². `values` is `[nrows, ncols]` with row 0
/// the northernmost; NaN marks cells without an estimate (serialized as
/// the NODATA sentinel).
#[derive(Debug, Clone)]
pub struct GhiGrid {
    pub values: Tensor,
    /// Latitude of the row-0 cell centers.
    pub origin_lat: f64,
    /// Longitude of the column-0 cell centers.
    pub origin_lon: f64,
    pub cell_size: f64,
    /// Hour timestamp or period tag. Not persisted by the grid file
    /// format; [`read_grid`] returns `None`.
    pub label: Option<String>,
}

impl GhiGrid {
    pub fn dims(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_lat - row as f64 * self.cell_size,
            self.origin_lon + col as f64 * self.cell_size,
        )
    }

    pub fn same_geometry(&self, other: &GhiGrid) -> bool {
        self.values.shape() == other.values.shape()
            && self.origin_lat == other.origin_lat
            && self.origin_lon == other.origin_lon
            && self.cell_size == other.cell_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.rank() != 2 {
            return Err(Error::Dimension(format!(
                "grid values must be [rows, cols], got rank {}",
                self.values.rank()
            )));
        }
        if self.values.is_empty() {
            return Err(Error::Dimension("empty grid".into()));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::Config(format!("cell size {}", self.cell_size)));
        }
        if !self.origin_lat.is_finite() || !self.origin_lon.is_finite() {
            return Err(Error::Config("non-finite grid origin".into()));
        }
        if let Some(v) = self
            .values
            .data()
            .iter()
            .find(|v| v.is_finite() && **v < 0.0)
        {
            return Err(Error::Input(format!(
                "negative cell value {v}; irradiance and energy are non-negative"
            )));
        }
        Ok(())
    }
}

/// Estimates GHI for every interior cell of the domain from one labeled
/// hour of tiles (the six 10-minute frames, in time order).
///
/// Each cell gets a pseudo-sample: its 7×7 window sequence, the cell's
/// coordinates, the label hour's time attributes, and altitude from `dem`
/// (`[nrows, ncols]`, meters) or 0 when absent. The boundary ring of
/// width 3 has no full window and is left NaN.
pub fn predict_grid(tiles: &[GridTile], model: &Model, dem: Option<&Tensor>) -> Result<GhiGrid> {
    if tiles.len() != FRAMES_PER_HOUR {
        return Err(Error::Gap(format!(
            "expected {FRAMES_PER_HOUR} frames for the hour, got {}",
            tiles.len()
        )));
    }
    let label = tiles[0].timestamp;
    if (label.minute(), label.second(), label.nanosecond()) != (0, 0, 0) {
        return Err(Error::Gap(format!(
            "first frame must start the hour, found {label}"
        )));
    }
    let first = &tiles[0];
    let (cn, hg, wg) = first.dims();
    for (k, tile) in tiles.iter().enumerate() {
        let want = label + Duration::minutes(10 * k as i64);
        if tile.timestamp != want {
            return Err(Error::Gap(format!(
                "frame {k}: expected {want}, found {}",
                tile.timestamp
            )));
        }
        if tile.channels != first.channels {
            return Err(Error::Input(format!(
                "frame {k} channel metadata differs from frame 0"
            )));
        }
        if tile.dims() != first.dims()
            || tile.origin_lat != first.origin_lat
            || tile.origin_lon != first.origin_lon
            || tile.cell_size != first.cell_size
        {
            return Err(Error::Input(format!(
                "frame {k} geometry differs from frame 0"
            )));
        }
    }
    let model_channels = model.normalizer.channel_min.len();
    if model_channels != cn {
        return Err(Error::Config(format!(
            "checkpoint was fitted on {model_channels} channels, tiles carry {cn}"
        )));
    }
    if let Some(d) = dem {
        if d.shape() != [hg, wg] {
            return Err(Error::Dimension(format!(
                "DEM shape {:?} does not match the {hg}x{wg} grid",
                d.shape()
            )));
        }
    }

    let half = SLICE_SIZE / 2;
    let plane = cn * SLICE_SIZE * SLICE_SIZE;
    let rows: Vec<Vec<f64>> = (0..hg)
        .into_par_iter()
        .map(|row| -> Result<Vec<f64>> {
            let mut out = vec![f64::NAN; wg];
            if row < half || row + half >= hg {
                return Ok(out);
            }
            for col in half..wg - half {
                let mut slices = Tensor::zeros(&[FRAMES_PER_HOUR, cn, SLICE_SIZE, SLICE_SIZE]);
                for (k, tile) in tiles.iter().enumerate() {
                    let s = grid::extract_slice_at(tile, row, col)?;
                    slices.data_mut()[k * plane..(k + 1) * plane].copy_from_slice(s.data());
                }
                let (lat, lon) = first.cell_center(row, col);
                let sample = Sample {
                    station_id: String::new(),
                    slices,
                    hour: label.hour(),
                    day: label.day(),
                    month: label.month(),
                    altitude: dem.map_or(0.0, |d| d.data()[row * wg + col]),
                    longitude: lon,
                    latitude: lat,
                    target_ghi: None,
                    normalized: false,
                };
                out[col] = model.predict(&sample)?;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut values = Vec::with_capacity(hg * wg);
    for row in rows {
        values.extend_from_slice(&row);
    }
    Ok(GhiGrid {
        values: Tensor::from_vec(&[hg, wg], values)?,
        origin_lat: first.origin_lat,
        origin_lon: first.origin_lon,
        cell_size: first.cell_size,
        label: Some(label.to_rfc3339_opts(SecondsFormat::Secs, true)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Season {
    Spring,
    Summer,
    Autumn,
    Winter,
}

impl Season {
    fn name(self) -> &'static str {
        match self {
            Season::Spring => "spring",
            Season::Summer => "summer",
            Season::Autumn => "autumn",
            Season::Winter => "winter",
        }
    }
}

/// An integration period. Quarters follow the study's grouping: spring
/// is December of the previous year plus January and February.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Period {
    Month { year: i32, month: u32 },
    Quarter { year: i32, season: Season },
    Year { year: i32 },
}

impl Period {
    /// The calendar months the period covers, as (year, month) pairs.
    pub fn months(self) -> Result<Vec<(i32, u32)>> {
        match self {
            Period::Month { year, month } => {
                if !(1..=12).contains(&month) {
                    return Err(Error::Config(format!("month {month} out of range")));
                }
                Ok(vec![(year, month)])
            }
            Period::Quarter { year, season } => Ok(match season {
                Season::Spring => vec![(year - 1, 12), (year, 1), (year, 2)],
                Season::Summer => vec![(year, 3), (year, 4), (year, 5)],
                Season::Autumn => vec![(year, 6), (year, 7), (year, 8)],
                Season::Winter => vec![(year, 9), (year, 10), (year, 11)],
            }),
            Period::Year { year } => Ok((1..=12).map(|m| (year, m)).collect()),
        }
    }

    /// Every hour start the period covers, in order.
    pub fn hours(self) -> Result<Vec<DateTime<Utc>>> {
        let mut out = Vec::new();
        for (y, m) in self.months()? {
            for d in 1..=days_in_month(y, m)? {
                for h in 0..24 {
                    out.push(Utc.with_ymd_and_hms(y, m, d, h, 0, 0).unwrap());
                }
            }
        }
        Ok(out)
    }

    pub fn contains(self, ts: DateTime<Utc>) -> bool {
        self.months()
            .map(|ms| ms.contains(&(ts.year(), ts.month())))
            .unwrap_or(false)
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Period::Month { year, month } => write!(f, "{year:04}-{month:02}"),
            Period::Quarter { year, season } => write!(f, "{year:04}-{}", season.name()),
            Period::Year { year } => write!(f, "{year:04}"),
        }
    }
}

impl FromStr for Period {
    type Err = Error;

    /// Parses `YYYY`, `YYYY-MM`, or `YYYY-<season>`.
    fn from_str(s: &str) -> Result<Period> {
        let bad = || Error::Config(format!("cannot parse period {s:?}"));
        match s.split_once('-') {
            None => Ok(Period::Year {
                year: s.parse().map_err(|_| bad())?,
            }),
            Some((y, rest)) => {
                let year = y.parse().map_err(|_| bad())?;
                let season = match rest {
                    "spring" => Some(Season::Spring),
                    "summer" => Some(Season::Summer),
                    "autumn" => Some(Season::Autumn),
                    "winter" => Some(Season::Winter),
                    _ => None,
                };
                match season {
                    Some(season) => Ok(Period::Quarter { year, season }),
                    None => {
                        let period = Period::Month {
                            year,
                            month: rest.parse().map_err(|_| bad())?,
                        };
                        period.months()?;
                        Ok(period)
                    }
                }
            }
        }
    }
}

fn days_in_month(year: i32, month: u32) -> Result<u32> {
    let first = NaiveDate::from_ymd_opt(year, month, 1)
        .ok_or_else(|| Error::Config(format!("invalid month {year}-{month}")))?;
    let next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)
    }
    .expect("first of a month");
    Ok((next - first).num_days() as u32)
}

/// What to do when the period is not fully covered by hourly grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapPolicy {
    /// Every hour of the period must be present.
    Strict,
    /// Integrate whatever hours are present (at least one).
    Skip,
}

/// Integrates hourly GHI grids into energy over the period, per cell:
/// Σ W/m² × 1 h ÷ 1000 → kWh/m² (compensated summation). Grids outside
/// the period are ignored; a NaN cell in any used hour leaves that cell
/// NaN.
pub fn integrate_energy(
    hourly: &[(DateTime<Utc>, GhiGrid)],
    period: Period,
    policy: GapPolicy,
) -> Result<GhiGrid> {
    let mut seen = std::collections::BTreeMap::new();
    for (ts, g) in hourly {
        if (ts.minute(), ts.second(), ts.nanosecond()) != (0, 0, 0) {
            return Err(Error::Input(format!("grid timestamp {ts} is not an hour start")));
        }
        if !period.contains(*ts) {
            continue;
        }
        if seen.insert(*ts, g).is_some() {
            return Err(Error::Input(format!("duplicate grid for hour {ts}")));
        }
    }

    let expected = period.hours()?;
    let missing: Vec<&DateTime<Utc>> =
        expected.iter().filter(|h| !seen.contains_key(h)).collect();
    if seen.is_empty() {
        return Err(Error::Coverage(format!(
            "no hourly grids fall inside {period}"
        )));
    }
    if policy == GapPolicy::Strict && !missing.is_empty() {
        let shown: Vec<String> = missing.iter().take(4).map(|h| h.to_string()).collect();
        let more = missing.len().saturating_sub(shown.len());
        let tail = if more > 0 {
            format!(" and {more} more")
        } else {
            String::new()
        };
        return Err(Error::Coverage(format!(
            "{} of {} hours of {period} missing: {}{tail}",
            missing.len(),
            expected.len(),
            shown.join(", "),
        )));
    }

    let first = seen.values().next().expect("nonempty");
    let n = first.values.len();
    let mut sum = vec![0.0f64; n];
    let mut comp = vec![0.0f64; n];
    for (ts, g) in &seen {
        if !g.same_geometry(first) {
            return Err(Error::Input(format!(
                "grid for {ts} has a different geometry"
            )));
        }
        let data = g.values.data();
        for i in 0..n {
            let y = data[i] - comp[i];
            let t = sum[i] + y;
            comp[i] = (t - sum[i]) - y;
            sum[i] = t;
        }
    }
    for v in &mut sum {
        *v /= 1000.0;
    }
    Ok(GhiGrid {
        values: Tensor::from_vec(first.values.shape(), sum)?,
        origin_lat: first.origin_lat,
        origin_lon: first.origin_lon,
        cell_size: first.cell_size,
        label: Some(period.to_string()),
    })
}

/// Writes the grid as an ESRI ASCII raster (`.asc`): six header lines,
/// then rows north to south, values to 6 significant digits, NaN as the
/// NODATA sentinel -9999.
pub fn write_grid(path: &Path, g: &GhiGrid) -> Result<()> {
    g.validate()?;
    fs::write(path, render_grid(g))?;
    Ok(())
}

fn render_grid(g: &GhiGrid) -> String {
    let (nr, nc) = g.dims();
    let xll = g.origin_lon - g.cell_size / 2.0;
    let yll = g.origin_lat - (nr - 1) as f64 * g.cell_size - g.cell_size / 2.0;
    let mut out = String::new();
    out.push_str(&format!("ncols        {nc}\n"));
    out.push_str(&format!("nrows        {nr}\n"));
    out.push_str(&format!("xllcorner    {xll}\n"));
    out.push_str(&format!("yllcorner    {yll}\n"));
    out.push_str(&format!("cellsize     {}\n", g.cell_size));
    out.push_str("NODATA_value -9999\n");
    let data = g.values.data();
    for row in 0..nr {
        let mut line = String::new();
        for col in 0..nc {
            if col > 0 {
                line.push(' ');
            }
            let v = data[row * nc + col];
            if v.is_nan() {
                line.push_str("-9999");
            } else {
                line.push_str(&format!("{v:.5e}"));
            }
        }
        line.push('\n');
        out.push_str(&line);
    }
    out
}

/// Reads an ESRI ASCII raster written by [`write_grid`]. The sentinel
/// value becomes NaN; the grid's label is not part of the format.
pub fn read_grid(path: &Path) -> Result<GhiGrid> {
    let text = fs::read_to_string(path)?;
    parse_grid(&text)
}

fn parse_grid(text: &str) -> Result<GhiGrid> {
    let fail = |offset: u64, line_no: usize, message: String| Error::Format {
        offset,
        message: format!("line {line_no}: {message}"),
    };
    // (byte offset of line start, 1-based line number, content)
    let mut lines = Vec::new();
    let mut offset = 0u64;
    for (i, raw) in text.split('\n').enumerate() {
        lines.push((offset, i + 1, raw.trim_end_matches('\r')));
        offset += raw.len() as u64 + 1;
    }

    const KEYS: [&str; 6] = [
        "ncols",
        "nrows",
        "xllcorner",
        "yllcorner",
        "cellsize",
        "nodata_value",
    ];
    let mut header = [0.0f64; 6];
    for (k, key) in KEYS.iter().enumerate() {
        let (off, no, line) = *lines
            .get(k)
            .ok_or_else(|| fail(offset, lines.len(), "missing header line".into()))?;
        let mut parts = line.split_whitespace();
        let (name, value) = (parts.next(), parts.next());
        if parts.next().is_some() {
            return Err(fail(off, no, format!("expected `{key} <value>`")));
        }
        match (name, value) {
            (Some(n), Some(v)) if n.eq_ignore_ascii_case(key) => {
                header[k] = v
                    .parse()
                    .map_err(|_| fail(off, no, format!("cannot parse {key} value {v:?}")))?;
            }
            _ => return Err(fail(off, no, format!("expected `{key} <value>`"))),
        }
    }
    let [nc, nr, xll, yll, cell, nodata] = header;
    if !(nc > 0.0 && nr > 0.0 && nc.fract() == 0.0 && nr.fract() == 0.0) {
        return Err(fail(0, 1, format!("grid of {nc} x {nr} cells")));
    }
    if !(cell > 0.0 && cell.is_finite()) {
        return Err(fail(lines[4].0, 5, format!("cell size {cell}")));
    }
    let (nc, nr) = (nc as usize, nr as usize);

    let mut values = Vec::with_capacity(nr * nc);
    for row in 0..nr {
        let (off, no, line) = *lines
            .get(6 + row)
            .ok_or_else(|| fail(offset, lines.len(), format!("missing data row {row}")))?;
        let mut count = 0usize;
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| fail(off, no, format!("cannot parse value {tok:?}")))?;
            values.push(if v == nodata { f64::NAN } else { v });
            count += 1;
        }
        if count != nc {
            return Err(fail(off, no, format!("expected {nc} values, found {count}")));
        }
    }
    for (off, no, line) in lines.iter().skip(6 + nr) {
        if !line.trim().is_empty() {
            return Err(fail(*off, *no, "trailing content after the last row".into()));
        }
    }

    Ok(GhiGrid {
        values: Tensor::from_vec(&[nr, nc], values)?,
        origin_lat: yll + (nr - 1) as f64 * cell + cell / 2.0,
        origin_lon: xll + cell / 2.0,
        cell_size: cell,
        label: None,
    })
}
