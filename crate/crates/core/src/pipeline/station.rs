//! Ground-station observation records and their CSV exchange format.
//!
//! CSV header: `station_id,lat,lon,alt,timestamp_utc,ghi_wm2` with ISO-8601
//! timestamps, UTF-8 encoded.

use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One hourly-mean GHI observation at a ground station. The timestamp
/// marks the start of the averaged hour, truncated to the hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub station_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
    pub timestamp: DateTime<Utc>,
    pub ghi: f64,
}

/// The study window of the source dataset: 102°–122° E, 18°–30° N.
pub const DOMAIN_LON: (f64, f64) = (102.0, 122.0);
pub const DOMAIN_LAT: (f64, f64) = (18.0, 30.0);

impl StationRecord {
    pub fn in_domain(&self) -> bool {
        self.longitude >= DOMAIN_LON.0
            && self.longitude <= DOMAIN_LON.1
            && self.latitude >= DOMAIN_LAT.0
            && self.latitude <= DOMAIN_LAT.1
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    station_id: String,
    lat: f64,
    lon: f64,
    alt: f64,
    timestamp_utc: String,
    ghi_wm2: f64,
}

/// Reads station records from CSV, validating coordinates and the GHI sign
/// invariant.
pub fn read_stations(path: &Path) -> Result<Vec<StationRecord>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (idx, row) in reader.deserialize::<CsvRow>().enumerate() {
        let line = idx + 2; // 1-based, after the header
        let row = row.map_err(|e| Error::Format {
            offset: line as u64,
            message: format!("{}: line {line}: {e}", path.display()),
        })?;
        let timestamp = DateTime::parse_from_rfc3339(&row.timestamp_utc)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| Error::Format {
                offset: line as u64,
                message: format!(
                    "{}: line {line}: bad timestamp {:?}: {e}",
                    path.display(),
                    row.timestamp_utc
                ),
            })?;
        if !row.ghi_wm2.is_finite() || row.ghi_wm2 < 0.0 {
            return Err(Error::Input(format!(
                "{}: line {line}: ghi must be finite and non-negative, got {}",
                path.display(),
                row.ghi_wm2
            )));
        }
        if !(-90.0..=90.0).contains(&row.lat) {
            return Err(Error::Input(format!(
                "{}: line {line}: latitude {} outside [-90, 90]",
                path.display(),
                row.lat
            )));
        }
        out.push(StationRecord {
            station_id: row.station_id,
            latitude: row.lat,
            longitude: row.lon,
            altitude: row.alt,
            timestamp,
            ghi: row.ghi_wm2,
        });
    }
    Ok(out)
}

/// Writes station records as CSV with the documented header.
pub fn write_stations(path: &Path, records: &[StationRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    for r in records {
        writer
            .serialize(CsvRow {
                station_id: r.station_id.clone(),
                lat: r.latitude,
                lon: r.longitude,
                alt: r.altitude,
                timestamp_utc: r.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                ghi_wm2: r.ghi,
            })
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Ok(())
}
