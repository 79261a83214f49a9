//! Solar-position geometry and hourly extraterrestrial irradiance.
//!
//! The extraterrestrial value serves as the physical upper bound in quality
//! control: a surface GHI observation can never exceed the horizontal
//! irradiance arriving at the top of the atmosphere. The construction is
//! the standard one: Cooper declination, a one-term eccentricity factor,
//! and an hour angle from longitude-shifted mean solar time (no equation of
//! time; its ±16 min effect is negligible against the hourly averaging
//! used here).

use chrono::{DateTime, Datelike, Duration, TimeZone, Timelike, Utc};

use crate::error::{Error, Result};

/// Total solar irradiance at 1 AU, W/m².
pub const SOLAR_CONSTANT: f64 = 1361.0;

/// Cooper's declination for day-of-year `n`, in radians.
pub fn declination(day_of_year: u32) -> f64 {
    let n = day_of_year as f64;
    23.45_f64.to_radians() * (2.0 * std::f64::consts::PI * (284.0 + n) / 365.0).sin()
}

/// Sun–earth distance correction (1 + 0.033 cos(2πn/365)).
pub fn eccentricity_factor(day_of_year: u32) -> f64 {
    let n = day_of_year as f64;
    1.0 + 0.033 * (2.0 * std::f64::consts::PI * n / 365.0).cos()
}

/// Cosine of the solar zenith angle.
pub fn cos_zenith(lat_rad: f64, declination_rad: f64, hour_angle_rad: f64) -> f64 {
    lat_rad.sin() * declination_rad.sin()
        + lat_rad.cos() * declination_rad.cos() * hour_angle_rad.cos()
}

/// Hour angle in radians for a mean solar time in fractional hours.
pub fn hour_angle(solar_time_h: f64) -> f64 {
    (15.0 * (solar_time_h - 12.0)).to_radians()
}

/// Hourly-mean extraterrestrial horizontal irradiance, W/m², for the hour
/// starting at `timestamp` (minutes/seconds are truncated away).
///
/// The hour is sampled once per minute at the minute midpoints; each sample
/// contributes `max(0, cos θz) · E0(n)`, and the mean is scaled by the
/// solar constant. Nighttime hours therefore return exactly 0.
pub fn extraterrestrial_ghi(
    timestamp: DateTime<Utc>,
    latitude_deg: f64,
    longitude_deg: f64,
) -> Result<f64> {
    if !(-90.0..=90.0).contains(&latitude_deg) {
        return Err(Error::Input(format!(
            "latitude {latitude_deg} outside [-90, 90]"
        )));
    }
    if !longitude_deg.is_finite() {
        return Err(Error::Input("longitude must be finite".into()));
    }
    let hour_start = truncate_to_hour(timestamp);
    let lat = latitude_deg.to_radians();
    let mut acc = 0.0;
    for m in 0..60 {
        let t = hour_start + Duration::seconds(m * 60 + 30);
        let n = t.ordinal();
        let utc_hours =
            t.hour() as f64 + t.minute() as f64 / 60.0 + t.second() as f64 / 3600.0;
        let solar_time = utc_hours + longitude_deg / 15.0;
        let cz = cos_zenith(lat, declination(n), hour_angle(solar_time));
        if cz > 0.0 {
            acc += cz * eccentricity_factor(n);
        }
    }
    Ok(SOLAR_CONSTANT * acc / 60.0)
}

/// Truncates a timestamp to the start of its hour.
pub fn truncate_to_hour(t: DateTime<Utc>) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(t.year(), t.month(), t.day(), t.hour(), 0, 0)
        .single()
        .expect("hour truncation of a valid timestamp")
}
