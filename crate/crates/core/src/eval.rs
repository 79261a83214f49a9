//! Deployment metrics: RMSE, MBE, R², Pearson r, and per-station
//! summaries.
//!
//! All moments use the population convention (divide by n). Situations
//! where a metric has no defined value (no pairs, a single pair, zero
//! variance) are reported as [`Error::UndefinedMetric`] rather than NaN.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

fn check_pairs(est: &[f64], obs: &[f64]) -> Result<()> {
    if est.len() != obs.len() {
        return Err(Error::Dimension(format!(
            "{} estimates against {} observations",
            est.len(),
            obs.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::UndefinedMetric("no pairs".into()));
    }
    Ok(())
}

/// Root mean square error `√(Σ(est−obs)²/n)`.
pub fn rmse(est: &[f64], obs: &[f64]) -> Result<f64> {
    check_pairs(est, obs)?;
    let n = est.len() as f64;
    let ss: f64 = est
        .iter()
        .zip(obs)
        .map(|(&e, &o)| (e - o) * (e - o))
        .sum();
    Ok((ss / n).sqrt())
}

/// Mean bias error `Σ(est−obs)/n`; positive means overestimation.
pub fn mbe(est: &[f64], obs: &[f64]) -> Result<f64> {
    check_pairs(est, obs)?;
    let n = est.len() as f64;
    Ok(est.iter().zip(obs).map(|(&e, &o)| e - o).sum::<f64>() / n)
}

/// Coefficient of determination `1 − Σ(obs−est)²/Σ(obs−ō)²`.
pub fn r2(est: &[f64], obs: &[f64]) -> Result<f64> {
    check_pairs(est, obs)?;
    if est.len() < 2 {
        return Err(Error::UndefinedMetric(
            "coefficient of determination needs at least 2 pairs".into(),
        ));
    }
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    let ss_tot: f64 = obs.iter().map(|&o| (o - mean) * (o - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric(
            "observations have zero variance".into(),
        ));
    }
    let ss_res: f64 = est
        .iter()
        .zip(obs)
        .map(|(&e, &o)| (o - e) * (o - e))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Pearson correlation coefficient.
pub fn pearson_r(est: &[f64], obs: &[f64]) -> Result<f64> {
    check_pairs(est, obs)?;
    if est.len() < 2 {
        return Err(Error::UndefinedMetric(
            "correlation needs at least 2 pairs".into(),
        ));
    }
    let n = est.len() as f64;
    let me = est.iter().sum::<f64>() / n;
    let mo = obs.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&e, &o) in est.iter().zip(obs) {
        sxy += (e - me) * (o - mo);
        sxx += (e - me) * (e - me);
        syy += (o - mo) * (o - mo);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric(
            "a series has zero variance".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// The four deployment metrics for one estimate/observation series.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub station_id: String,
    pub n: usize,
    pub rmse: f64,
    pub mbe: f64,
    pub r2: f64,
    pub r: f64,
}

pub fn metrics_report(station_id: &str, est: &[f64], obs: &[f64]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        station_id: station_id.to_string(),
        n: est.len(),
        rmse: rmse(est, obs)?,
        mbe: mbe(est, obs)?,
        r2: r2(est, obs)?,
        r: pearson_r(est, obs)?,
    })
}

/// Mean and population standard deviation of one metric across stations.
#[derive(Debug, Clone, Serialize)]
pub struct MetricSpread {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation of a metric series.
pub fn metric_spread(values: &[f64]) -> MetricSpread {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MetricSpread {
        mean,
        std: var.sqrt(),
    }
}

/// Per-station metrics plus their spread across stations.
#[derive(Debug, Clone, Serialize)]
pub struct StationSummary {
    pub stations: Vec<MetricsReport>,
    /// Stations left out of the aggregate, with the reason.
    pub skipped: Vec<SkippedStation>,
    pub rmse: MetricSpread,
    pub mbe: MetricSpread,
    pub r2: MetricSpread,
    pub r: MetricSpread,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedStation {
    pub station_id: String,
    pub n: usize,
    pub reason: String,
}

/// Groups (station, estimate, observation) triples by station and reports
/// each station's metrics plus the across-station mean ± population
/// standard deviation. Stations whose metrics are undefined are listed as
/// skipped.
pub fn per_station_report(pairs: &[(String, f64, f64)]) -> Result<StationSummary> {
    if pairs.is_empty() {
        return Err(Error::Input("no estimate/observation pairs".into()));
    }
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (id, e, o) in pairs {
        let g = groups.entry(id).or_default();
        g.0.push(*e);
        g.1.push(*o);
    }

    let mut stations = Vec::new();
    let mut skipped = Vec::new();
    for (id, (est, obs)) in &groups {
        match metrics_report(id, est, obs) {
            Ok(m) => stations.push(m),
            Err(Error::UndefinedMetric(reason)) => skipped.push(SkippedStation {
                station_id: id.to_string(),
                n: est.len(),
                reason,
            }),
            Err(e) => return Err(e),
        }
    }
    if stations.is_empty() {
        return Err(Error::UndefinedMetric(
            "no station has enough varied data for metrics".into(),
        ));
    }

    let collect = |f: fn(&MetricsReport) -> f64| -> Vec<f64> { stations.iter().map(f).collect() };
    Ok(StationSummary {
        rmse: metric_spread(&collect(|m| m.rmse)),
        mbe: metric_spread(&collect(|m| m.mbe)),
        r2: metric_spread(&collect(|m| m.r2)),
        r: metric_spread(&collect(|m| m.r)),
        stations,
        skipped,
    })
}

/// Writes the per-station table as CSV.
pub fn write_station_csv(path: &Path, summary: &StationSummary) -> Result<()> {
    let mut out = String::from("station_id,n,rmse_wm2,mbe_wm2,r2,r\n");
    for m in &summary.stations {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.station_id, m.n, m.rmse, m.mbe, m.r2, m.r
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1000.0)).collect();
        let est: Vec<f64> = obs
            .iter()
            .map(|&o| o + rng.random_range(-80.0..80.0))
            .collect();
        (est, obs)
    }

    #[test]
    fn perfect_estimates_hit_the_ideal_values() {
        let (_, obs) = series(50, 1);
        assert_eq!(rmse(&obs, &obs).unwrap(), 0.0);
        assert_eq!(mbe(&obs, &obs).unwrap(), 0.0);
        assert_eq!(r2(&obs, &obs).unwrap(), 1.0);
        assert!((pearson_r(&obs, &obs).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_offset_case() {
        let (_, obs) = series(64, 2);
        let est: Vec<f64> = obs.iter().map(|&o| o + 10.0).collect();
        assert!((rmse(&est, &obs).unwrap() - 10.0).abs() < 1e-9);
        assert!((mbe(&est, &obs).unwrap() - 10.0).abs() < 1e-9);
        // Shifting does not affect correlation.
        assert!((pearson_r(&est, &obs).unwrap() - 1.0).abs() < 1e-12);
        // R² pays for the bias: 1 − n·100/SS_tot.
        let n = obs.len() as f64;
        let mean = obs.iter().sum::<f64>() / n;
        let ss_tot: f64 = obs.iter().map(|&o| (o - mean) * (o - mean)).sum();
        let want = 1.0 - 100.0 * n / ss_tot;
        assert!((r2(&est, &obs).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn metrics_match_naive_reference_loops() {
        let (est, obs) = series(211, 3);
        let n = est.len() as f64;

        let mut ss = 0.0;
        let mut bias = 0.0;
        for k in 0..est.len() {
            ss += (est[k] - obs[k]).powi(2);
            bias += est[k] - obs[k];
        }
        assert!((rmse(&est, &obs).unwrap() - (ss / n).sqrt()).abs() < 1e-12);
        assert!((mbe(&est, &obs).unwrap() - bias / n).abs() < 1e-12);

        let me = est.iter().sum::<f64>() / n;
        let mo = obs.iter().sum::<f64>() / n;
        let cov: f64 = (0..est.len())
            .map(|k| (est[k] - me) * (obs[k] - mo))
            .sum::<f64>()
            / n;
        let se = ((0..est.len()).map(|k| (est[k] - me).powi(2)).sum::<f64>() / n).sqrt();
        let so = ((0..est.len()).map(|k| (obs[k] - mo).powi(2)).sum::<f64>() / n).sqrt();
        assert!((pearson_r(&est, &obs).unwrap() - cov / (se * so)).abs() < 1e-12);
    }

    #[test]
    fn correlation_is_affine_invariant() {
        let (est, obs) = series(80, 4);
        let base = pearson_r(&est, &obs).unwrap();
        let scaled: Vec<f64> = est.iter().map(|&e| 2.7 * e + 300.0).collect();
        assert!((pearson_r(&scaled, &obs).unwrap() - base).abs() < 1e-12);
        let flipped: Vec<f64> = est.iter().map(|&e| -0.5 * e + 10.0).collect();
        assert!((pearson_r(&flipped, &obs).unwrap() + base).abs() < 1e-12);
    }

    /// For the least-squares line est ↦ α + β·est, the coefficient of
    /// determination of the fitted values equals r² of the raw series.
    #[test]
    fn r2_of_least_squares_fit_equals_r_squared() {
        let (est, obs) = series(120, 5);
        let n = est.len() as f64;
        let me = est.iter().sum::<f64>() / n;
        let mo = obs.iter().sum::<f64>() / n;
        let cov: f64 = (0..est.len())
            .map(|k| (est[k] - me) * (obs[k] - mo))
            .sum::<f64>();
        let var_e: f64 = est.iter().map(|&e| (e - me) * (e - me)).sum();
        let beta = cov / var_e;
        let alpha = mo - beta * me;
        let fitted: Vec<f64> = est.iter().map(|&e| alpha + beta * e).collect();

        let r = pearson_r(&est, &obs).unwrap();
        assert!((r2(&fitted, &obs).unwrap() - r * r).abs() < 1e-12);
    }

    /// RMSE² = MBE² + population variance of the residuals.
    #[test]
    fn bias_variance_identity() {
        let (est, obs) = series(150, 6);
        let n = est.len() as f64;
        let b = mbe(&est, &obs).unwrap();
        let var: f64 = est
            .iter()
            .zip(&obs)
            .map(|(&e, &o)| (e - o - b) * (e - o - b))
            .sum::<f64>()
            / n;
        let lhs = rmse(&est, &obs).unwrap().powi(2);
        assert!((lhs - (b * b + var)).abs() < 1e-9);
    }

    #[test]
    fn undefined_cases_are_errors_not_nan() {
        assert!(matches!(
            rmse(&[], &[]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            r2(&[1.0], &[2.0]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            pearson_r(&[1.0], &[2.0]),
            Err(Error::UndefinedMetric(_))
        ));
        // Zero variance on either side.
        assert!(matches!(
            pearson_r(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            r2(&[1.0, 2.0], &[5.0, 5.0]),
            Err(Error::UndefinedMetric(_))
        ));
        // Mismatched lengths are a dimension problem, not a metric one.
        assert!(matches!(
            rmse(&[1.0], &[1.0, 2.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn per_station_groups_and_aggregates() {
        let mut pairs = Vec::new();
        let (est_a, obs_a) = series(30, 7);
        for k in 0..30 {
            pairs.push(("A".to_string(), est_a[k], obs_a[k]));
        }
        let (est_b, obs_b) = series(40, 8);
        for k in 0..40 {
            pairs.push(("B".to_string(), est_b[k], obs_b[k]));
        }
        // One station with a single record: metrics undefined.
        pairs.push(("C".to_string(), 100.0, 120.0));

        let summary = per_station_report(&pairs).unwrap();
        assert_eq!(summary.stations.len(), 2);
        assert_eq!(summary.skipped.len(), 1);
        assert_eq!(summary.skipped[0].station_id, "C");

        let ra = rmse(&est_a, &obs_a).unwrap();
        let rb = rmse(&est_b, &obs_b).unwrap();
        assert!((summary.rmse.mean - (ra + rb) / 2.0).abs() < 1e-12);
        let sd = (((ra - summary.rmse.mean).powi(2) + (rb - summary.rmse.mean).powi(2)) / 2.0)
            .sqrt();
        assert!((summary.rmse.std - sd).abs() < 1e-12);
    }

    #[test]
    fn station_csv_has_documented_header() {
        let (est, obs) = series(10, 9);
        let pairs: Vec<(String, f64, f64)> = (0..10)
            .map(|k| ("S1".to_string(), est[k], obs[k]))
            .collect();
        let summary = per_station_report(&pairs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_station_csv(&path, &summary).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("station_id,n,rmse_wm2,mbe_wm2,r2,r"));
        assert!(lines.next().unwrap().starts_with("S1,10,"));
    }
}
