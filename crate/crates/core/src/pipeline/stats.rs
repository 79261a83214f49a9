//! Order statistics, per-channel slice summaries, and correlation-based
//! channel selection.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Sample;
use crate::pipeline::grid::ChannelMeta;

/// Linear-interpolation quantile of an already sorted slice: the value at
/// fractional order-statistic index `q * (n - 1)`.
///
/// Panics if `sorted` is empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty slice");
    let idx = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = idx - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Summary of one channel's values over a 7×7 window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelStats {
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    pub median: f64,
}

/// Per-channel statistics of one timestep of a sample's slice sequence.
pub fn slice_channel_stats(s: &Sample, timestep: usize) -> Result<Vec<ChannelStats>> {
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
    if timestep >= t_n {
        return Err(Error::Input(format!(
            "timestep {timestep} out of range for {t_n} frames"
        )));
    }
    let hw = h * w;
    let data = s.slices.data();
    let mut out = Vec::with_capacity(c_n);
    for c in 0..c_n {
        let base = (timestep * c_n + c) * hw;
        let plane = &data[base..base + hw];
        let mut sorted = plane.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        out.push(ChannelStats {
            max: sorted[hw - 1],
            min: sorted[0],
            mean: plane.iter().sum::<f64>() / hw as f64,
            median: quantile_sorted(&sorted, 0.5),
        });
    }
    Ok(out)
}

/// Pearson correlation with degenerate inputs mapped to 0 instead of an
/// error; the boolean is true when either series had zero variance.
fn pearson_or_zero(x: &[f64], y: &[f64]) -> (f64, bool) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        (0.0, true)
    } else {
        (sxy / (sxx * syy).sqrt(), false)
    }
}

/// One channel's correlations between slice statistics and the target.
#[derive(Debug, Clone, Serialize)]
pub struct PccRow {
    pub channel_id: String,
    pub pcc_max: f64,
    pub pcc_min: f64,
    pub pcc_mean: f64,
    pub pcc_median: f64,
    /// True when some statistic had zero variance across samples (its
    /// correlation is reported as 0).
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PccTable {
    pub rows: Vec<PccRow>,
    /// Which timestep of the slice sequence the statistics were taken
    /// from.
    pub timestep: usize,
    pub sample_count: usize,
}

/// Correlates per-channel slice statistics against the target GHI across
/// all labeled samples.
///
/// `timestep` selects the frame the statistics are computed on; `None`
/// means the last frame of the sequence.
pub fn pcc_table(
    samples: &[Sample],
    channels: &[ChannelMeta],
    timestep: Option<usize>,
) -> Result<PccTable> {
    let labeled: Vec<&Sample> = samples.iter().filter(|s| s.target_ghi.is_some()).collect();
    if labeled.len() < 2 {
        return Err(Error::Input(format!(
            "channel correlation needs at least 2 labeled samples, got {}",
            labeled.len()
        )));
    }
    let t_n = labeled[0].slices.shape()[0];
    let c_n = labeled[0].slices.shape()[1];
    if c_n != channels.len() {
        return Err(Error::Dimension(format!(
            "{} channels of metadata for {} slice channels",
            channels.len(),
            c_n
        )));
    }
    let t = timestep.unwrap_or(t_n - 1);

    let targets: Vec<f64> = labeled.iter().map(|s| s.target_ghi.unwrap()).collect();
    // stats[c][k][i]: channel c, statistic k (max, min, mean, median),
    // sample i.
    let mut stats = vec![[const { Vec::new() }; 4]; c_n];
    for s in &labeled {
        let per_channel = slice_channel_stats(s, t)?;
        for (c, cs) in per_channel.iter().enumerate() {
            stats[c][0].push(cs.max);
            stats[c][1].push(cs.min);
            stats[c][2].push(cs.mean);
            stats[c][3].push(cs.median);
        }
    }

    let mut rows = Vec::with_capacity(c_n);
    for (c, meta) in channels.iter().enumerate() {
        let mut pcc = [0.0; 4];
        let mut degenerate = false;
        for k in 0..4 {
            let (v, flat) = pearson_or_zero(&stats[c][k], &targets);
            pcc[k] = v;
            degenerate |= flat;
        }
        rows.push(PccRow {
            channel_id: meta.id.clone(),
            pcc_max: pcc[0],
            pcc_min: pcc[1],
            pcc_mean: pcc[2],
            pcc_median: pcc[3],
            degenerate,
        });
    }
    Ok(PccTable {
        rows,
        timestep: t,
        sample_count: labeled.len(),
    })
}

/// Indices of channels whose `|PCC_mean|` reaches the threshold.
pub fn select_by_pcc_mean(pcc_means: &[f64], threshold: f64) -> Vec<usize> {
    pcc_means
        .iter()
        .enumerate()
        .filter(|(_, &p)| p.abs() >= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Computes the correlation table and applies the mean-statistic
/// threshold, returning the table along with the selected channel
/// indices.
pub fn pcc_select(
    samples: &[Sample],
    channels: &[ChannelMeta],
    threshold: f64,
    timestep: Option<usize>,
) -> Result<(PccTable, Vec<usize>)> {
    let table = pcc_table(samples, channels, timestep)?;
    let means: Vec<f64> = table.rows.iter().map(|r| r.pcc_mean).collect();
    let selected = select_by_pcc_mean(&means, threshold);
    Ok((table, selected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantile_matches_documented_whisker_case() {
        let v = [100.0, 200.0, 300.0, 400.0];
        assert_eq!(quantile_sorted(&v, 0.25), 175.0);
        assert_eq!(quantile_sorted(&v, 0.75), 325.0);
        assert_eq!(quantile_sorted(&v, 0.5), 250.0);
        assert_eq!(quantile_sorted(&v, 0.0), 100.0);
        assert_eq!(quantile_sorted(&v, 1.0), 400.0);
    }

    #[test]
    fn quantile_single_element_and_exact_index() {
        assert_eq!(quantile_sorted(&[7.0], 0.25), 7.0);
        // n = 5: q = 0.25 lands exactly on index 1.
        let v = [1.0, 2.0, 4.0, 8.0, 16.0];
        assert_eq!(quantile_sorted(&v, 0.25), 2.0);
        assert_eq!(quantile_sorted(&v, 0.5), 4.0);
    }

    #[test]
    fn quantile_interpolates_against_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2usize, 3, 10, 101] {
            let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
                let idx = q * (n - 1) as f64;
                let lo = idx.floor() as usize;
                let hi = idx.ceil() as usize;
                let want = v[lo] * (1.0 - (idx - lo as f64)) + v[hi] * (idx - lo as f64);
                assert!((quantile_sorted(&v, q) - want).abs() < 1e-12);
            }
        }
    }

    fn sample_with_planes(planes: &[Vec<f64>], target: f64) -> Sample {
        // One timestep, each entry of `planes` a channel's 7×7 values.
        let c_n = planes.len();
        let mut data = Vec::with_capacity(c_n * 49);
        for p in planes {
            assert_eq!(p.len(), 49);
            data.extend_from_slice(p);
        }
        Sample {
            station_id: "S".into(),
            slices: Tensor::from_vec(&[1, c_n, 7, 7], data).unwrap(),
            hour: 4,
            day: 10,
            month: 6,
            altitude: 10.0,
            longitude: 110.0,
            latitude: 24.0,
            target_ghi: Some(target),
            normalized: false,
        }
    }

    #[test]
    fn channel_stats_match_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plane: Vec<f64> = (0..49).map(|_| rng.random_range(150.0..400.0)).collect();
        let s = sample_with_planes(&[plane.clone()], 500.0);
        let st = slice_channel_stats(&s, 0).unwrap();
        let mut sorted = plane.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(st[0].max, sorted[48]);
        assert_eq!(st[0].min, sorted[0]);
        assert_eq!(st[0].median, sorted[24]);
        let mean = plane.iter().sum::<f64>() / 49.0;
        assert!((st[0].mean - mean).abs() < 1e-12);
    }

    /// Builds `n` single-channel samples whose plane-constant value has an
    /// exactly prescribed sample correlation with the target.
    fn correlated_samples(n: usize, rho: f64, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let standardize = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / n as f64;
            let sd = (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n as f64).sqrt();
            v.iter().map(|a| (a - m) / sd).collect::<Vec<f64>>()
        };
        let ys = standardize(&y);
        // Gram–Schmidt: make z exactly orthogonal to ys, then standardize.
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, w)| x * w).sum::<f64>();
        let proj = dot(&z, &ys) / dot(&ys, &ys);
        let z_orth: Vec<f64> = z.iter().zip(&ys).map(|(a, b)| a - proj * b).collect();
        let zs = standardize(&z_orth);
        (0..n)
            .map(|i| {
                let v = rho * ys[i] + (1.0 - rho * rho).sqrt() * zs[i];
                sample_with_planes(&[vec![v; 49]], ys[i])
            })
            .collect()
    }

    #[test]
    fn pcc_of_engineered_correlation_is_exact() {
        let channels = vec![ChannelMeta {
            id: "B01".into(),
            kind: crate::pipeline::grid::ChannelKind::Bt,
        }];
        for rho in [0.0, 0.3, -0.7, 0.95] {
            let samples = correlated_samples(40, rho, 17);
            let table = pcc_table(&samples, &channels, None).unwrap();
            // Constant planes: all four statistics equal the plane value.
            assert!((table.rows[0].pcc_mean - rho).abs() < 1e-9, "rho={rho}");
            assert!((table.rows[0].pcc_max - rho).abs() < 1e-9);
            assert!((table.rows[0].pcc_median - rho).abs() < 1e-9);
            assert!(!table.rows[0].degenerate);
        }
    }

    #[test]
    fn pcc_is_invariant_under_positive_affine_maps() {
        let channels = vec![ChannelMeta {
            id: "B01".into(),
            kind: crate::pipeline::grid::ChannelKind::Bt,
        }];
        let samples = correlated_samples(30, 0.6, 5);
        let base = pcc_table(&samples, &channels, None).unwrap().rows[0].pcc_mean;
        let mapped: Vec<Sample> = samples
            .iter()
            .map(|s| {
                let mut s2 = s.clone();
                for v in s2.slices.data_mut() {
                    *v = 3.5 * *v + 120.0;
                }
                s2
            })
            .collect();
        let after = pcc_table(&mapped, &channels, None).unwrap().rows[0].pcc_mean;
        assert!((base - after).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_channel_reports_zero_with_flag() {
        let channels = vec![ChannelMeta {
            id: "B01".into(),
            kind: crate::pipeline::grid::ChannelKind::Bt,
        }];
        let samples: Vec<Sample> = (0..10)
            .map(|i| sample_with_planes(&[vec![200.0; 49]], i as f64))
            .collect();
        let table = pcc_table(&samples, &channels, None).unwrap();
        assert_eq!(table.rows[0].pcc_mean, 0.0);
        assert!(table.rows[0].degenerate);
    }

    #[test]
    fn selection_thresholds_on_absolute_mean_statistic() {
        // The published per-channel mean-statistic correlations.
        let means = [
            0.155, 0.148, 0.137, 0.183, 0.196, 0.172, 0.509, 0.024, 0.050, 0.097, 0.297, 0.297,
            0.294, 0.276, 0.247, 0.204,
        ];
        assert_eq!(select_by_pcc_mean(&means, 0.24), vec![6, 10, 11, 12, 13, 14]);
        // Negative correlations count by magnitude.
        assert_eq!(select_by_pcc_mean(&[-0.3, 0.1, 0.24], 0.24), vec![0, 2]);
        assert!(select_by_pcc_mean(&[0.1, -0.2], 0.5).is_empty());
    }

    #[test]
    fn unlabeled_samples_are_ignored() {
        let channels = vec![ChannelMeta {
            id: "B01".into(),
            kind: crate::pipeline::grid::ChannelKind::Bt,
        }];
        let mut samples = correlated_samples(25, 0.5, 9);
        let base = pcc_table(&samples, &channels, None).unwrap().rows[0].pcc_mean;
        let mut extra = samples[0].clone();
        extra.target_ghi = None;
        for v in extra.slices.data_mut() {
            *v += 1e6;
        }
        samples.push(extra);
        let after = pcc_table(&samples, &channels, None).unwrap();
        assert_eq!(after.sample_count, 25);
        assert!((after.rows[0].pcc_mean - base).abs() < 1e-15);
    }
}
