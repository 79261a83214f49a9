//! Observation quality control: the physical upper-bound filter and the
//! per-hour interquartile-range outlier filter.
//!
//! The two stages run in this order on station records; both only ever
//! remove values from the top of the distribution (implausibly large GHI),
//! the lower tail is deliberately untouched.

use std::collections::BTreeMap;

use chrono::Timelike;
use serde::Serialize;

use crate::error::Result;
use crate::pipeline::solar::extraterrestrial_ghi;
use crate::pipeline::station::StationRecord;
use crate::pipeline::stats::quantile_sorted;

/// Outcome of one filter stage.
#[derive(Debug)]
pub struct FilterOutcome {
    pub retained: Vec<StationRecord>,
    pub rejected: Vec<StationRecord>,
}

impl FilterOutcome {
    pub fn counts(&self) -> (usize, usize) {
        (self.retained.len(), self.rejected.len())
    }
}

/// Retains a record iff its GHI does not exceed the hourly extraterrestrial
/// irradiance at its time and place.
pub fn physical_threshold_filter(records: &[StationRecord]) -> Result<FilterOutcome> {
    let mut retained = Vec::new();
    let mut rejected = Vec::new();
    for r in records {
        let cap = extraterrestrial_ghi(r.timestamp, r.latitude, r.longitude)?;
        if r.ghi <= cap {
            retained.push(r.clone());
        } else {
            rejected.push(r.clone());
        }
    }
    Ok(FilterOutcome { retained, rejected })
}

/// Upper whisker of one hour-of-day group.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HourWhisker {
    pub hour: u32,
    pub q1: f64,
    pub q3: f64,
    pub upper: f64,
    pub group_size: usize,
}

#[derive(Debug)]
pub struct IqrOutcome {
    pub retained: Vec<StationRecord>,
    pub rejected: Vec<StationRecord>,
    pub whiskers: Vec<HourWhisker>,
}

/// Within each hour-of-day group (UTC hour of the record timestamp),
/// rejects values strictly above Q3 + 1.5·(Q3−Q1). Quantiles are computed
/// by linear interpolation between order statistics.
pub fn iqr_filter(records: &[StationRecord]) -> Result<IqrOutcome> {
    let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry(r.timestamp.time().hour())
            .or_default()
            .push(r.ghi);
    }

    let mut whisker_of = BTreeMap::new();
    let mut whiskers = Vec::new();
    for (hour, mut values) in groups {
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite ghi"));
        let q1 = quantile_sorted(&values, 0.25);
        let q3 = quantile_sorted(&values, 0.75);
        let upper = q3 + 1.5 * (q3 - q1);
        whisker_of.insert(hour, upper);
        whiskers.push(HourWhisker {
            hour,
            q1,
            q3,
            upper,
            group_size: values.len(),
        });
    }

    let mut retained = Vec::new();
    let mut rejected = Vec::new();
    for r in records {
        let upper = whisker_of[&r.timestamp.time().hour()];
        if r.ghi > upper {
            rejected.push(r.clone());
        } else {
            retained.push(r.clone());
        }
    }
    Ok(IqrOutcome {
        retained,
        rejected,
        whiskers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(hour: u32, ghi: f64) -> StationRecord {
        StationRecord {
            station_id: "S".into(),
            latitude: 24.0,
            longitude: 110.0,
            altitude: 50.0,
            timestamp: Utc.with_ymd_and_hms(2020, 4, 10, hour, 0, 0).unwrap(),
            ghi,
        }
    }

    #[test]
    fn threshold_filter_respects_physical_cap() {
        // Night hour (local midnight at 110°E is ~16–17 UTC): cap is 0.
        let records = vec![rec(17, 0.0), rec(17, 5.0), rec(4, 300.0), rec(4, 1500.0)];
        let out = physical_threshold_filter(&records).unwrap();
        let kept: Vec<f64> = out.retained.iter().map(|r| r.ghi).collect();
        assert_eq!(kept, vec![0.0, 300.0]);
        assert_eq!(out.rejected.len(), 2);
    }

    #[test]
    fn threshold_filter_never_keeps_exceeding_records() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let records: Vec<StationRecord> = (0..500)
            .map(|_| {
                let mut r = rec(rng.random_range(0..24), 0.0);
                r.ghi = rng.random_range(0.0..1600.0);
                r.latitude = rng.random_range(18.0..30.0);
                r.longitude = rng.random_range(102.0..122.0);
                r
            })
            .collect();
        let out = physical_threshold_filter(&records).unwrap();
        assert_eq!(out.retained.len() + out.rejected.len(), records.len());
        for r in &out.retained {
            let cap = extraterrestrial_ghi(r.timestamp, r.latitude, r.longitude).unwrap();
            assert!(r.ghi <= cap);
        }
        for r in &out.rejected {
            let cap = extraterrestrial_ghi(r.timestamp, r.latitude, r.longitude).unwrap();
            assert!(r.ghi > cap);
        }
    }

    #[test]
    fn iqr_whisker_on_documented_group() {
        let records: Vec<StationRecord> =
            [100.0, 200.0, 300.0, 400.0].iter().map(|&g| rec(6, g)).collect();
        let out = iqr_filter(&records).unwrap();
        assert_eq!(out.whiskers.len(), 1);
        let w = out.whiskers[0];
        assert!((w.q1 - 175.0).abs() < 1e-12);
        assert!((w.q3 - 325.0).abs() < 1e-12);
        assert!((w.upper - 550.0).abs() < 1e-12);
        assert_eq!(out.rejected.len(), 0);
        assert_eq!(out.retained.len(), 4);
    }

    #[test]
    fn iqr_rejects_only_strictly_above_upper_whisker() {
        let mut records: Vec<StationRecord> =
            [100.0, 200.0, 300.0, 400.0].iter().map(|&g| rec(8, g)).collect();
        records.push(rec(8, 550.0));
        let out = iqr_filter(&records).unwrap();
        let mut vals = [100.0, 200.0, 300.0, 400.0, 550.0];
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q1 = quantile_sorted(&vals, 0.25);
        let q3 = quantile_sorted(&vals, 0.75);
        let upper = q3 + 1.5 * (q3 - q1);
        for r in &out.retained {
            assert!(r.ghi <= upper);
        }
        for r in &out.rejected {
            assert!(r.ghi > upper);
        }
    }

    #[test]
    fn identical_values_are_never_outliers() {
        let records: Vec<StationRecord> = (0..10).map(|_| rec(9, 250.0)).collect();
        let out = iqr_filter(&records).unwrap();
        assert_eq!(out.rejected.len(), 0);
        assert_eq!(out.whiskers[0].upper, 250.0);
    }

    #[test]
    fn groups_are_per_hour() {
        let mut records: Vec<StationRecord> = (0..20).map(|i| rec(3, 100.0 + i as f64)).collect();
        records.extend((0..20).map(|i| rec(10, 600.0 + i as f64)));
        // A value huge for hour 3 but ordinary for hour 10.
        records.push(rec(3, 615.0));
        let out = iqr_filter(&records).unwrap();
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].ghi, 615.0);
        assert_eq!(out.rejected[0].timestamp.time().hour(), 3);
    }
}
