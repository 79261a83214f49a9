//! Synthetic dataset generator for learnability and pipeline tests.
//!
//! Each sample is a cloud scene: a Gaussian blob with random position,
//! size, intensity, and drift crosses the 7×7 window over six frames.
//! Albedo channels brighten under the cloud, brightness-temperature
//! channels cool. The target is a clear-sky value attenuated by how much
//! cloud covered the window center, so recovering it requires combining
//! the spatial cloud signal with the time attributes that drive the
//! clear-sky level.

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::Sample;
use crate::numerics::Tensor;
use crate::pipeline::dataset::Dataset;
use crate::pipeline::grid::{standard_channels, FRAMES_PER_HOUR, SLICE_SIZE};
use crate::pipeline::solar;

/// Knobs for [`synthesize_with`]; [`Default`] gives the standard task.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    /// With spatial structure the blob has a random position and drift;
    /// without, every frame is a uniform plane at the blob intensity.
    pub spatial_mode: bool,
    /// Relative amplitude of the multiplicative target noise.
    pub target_noise: f64,
    /// Absolute amplitude of per-pixel channel noise.
    pub pixel_noise: f64,
    /// Range the per-sample cloud intensity is drawn from.
    pub intensity: (f64, f64),
    pub lat_range: (f64, f64),
    pub lon_range: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 256,
            seed: 0,
            spatial_mode: true,
            target_noise: 0.01,
            pixel_noise: 0.25,
            intensity: (0.0, 1.0),
            // Narrow geographic spread keeps the clear-sky level nearly a
            // function of the time attributes alone.
            lat_range: (23.6, 24.4),
            lon_range: (111.5, 112.5),
        }
    }
}

/// Ground-truth latent variables behind each sample, for tests.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    pub coverage: Vec<f64>,
    pub attenuation: Vec<f64>,
    pub clear_sky: Vec<f64>,
}

/// Convenience wrapper over [`synthesize_with`] discarding the truth.
pub fn synthesize(n: usize, seed: u64, spatial_mode: bool) -> Result<Dataset> {
    let cfg = SynthConfig {
        n,
        seed,
        spatial_mode,
        ..SynthConfig::default()
    };
    Ok(synthesize_with(&cfg)?.0)
}

/// Center-weighted window average: Gaussian weights (σ = 1.5 cells)
/// around the middle cell, normalized to sum to one.
fn center_weights() -> [f64; SLICE_SIZE * SLICE_SIZE] {
    let mut w = [0.0; SLICE_SIZE * SLICE_SIZE];
    let mid = (SLICE_SIZE / 2) as f64;
    let mut sum = 0.0;
    for i in 0..SLICE_SIZE {
        for j in 0..SLICE_SIZE {
            let d2 = (i as f64 - mid).powi(2) + (j as f64 - mid).powi(2);
            let v = (-d2 / (2.0 * 1.5 * 1.5)).exp();
            w[i * SLICE_SIZE + j] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

pub fn synthesize_with(cfg: &SynthConfig) -> Result<(Dataset, SynthTruth)> {
    let channels = standard_channels();
    let c_n = channels.len();
    let hw = SLICE_SIZE * SLICE_SIZE;
    let weights = center_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut samples = Vec::with_capacity(cfg.n);
    let mut truth = SynthTruth {
        coverage: Vec::with_capacity(cfg.n),
        attenuation: Vec::with_capacity(cfg.n),
        clear_sky: Vec::with_capacity(cfg.n),
    };

    for k in 0..cfg.n {
        let month = rng.random_range(1..=12u32);
        let day = rng.random_range(1..=28u32);
        // UTC 2–8 is late morning to mid afternoon at these longitudes.
        let hour = rng.random_range(2..=8u32);
        let latitude = rng.random_range(cfg.lat_range.0..cfg.lat_range.1);
        let longitude = rng.random_range(cfg.lon_range.0..cfg.lon_range.1);
        let altitude = rng.random_range(0.0..500.0);
        let timestamp = Utc.with_ymd_and_hms(2020, month, day, hour, 0, 0).unwrap();

        // Cloud scene.
        let a = if cfg.intensity.1 > cfg.intensity.0 {
            rng.random_range(cfg.intensity.0..cfg.intensity.1)
        } else {
            cfg.intensity.0
        };
        let (cx0, cy0) = (rng.random_range(0.0..6.0), rng.random_range(0.0..6.0));
        let (vx, vy) = (rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8));
        let sigma = rng.random_range(0.8..2.5);

        // Per-sample channel baselines.
        let albedo_base: Vec<f64> = (0..6).map(|_| rng.random_range(5.0..15.0)).collect();
        let bt_base: Vec<f64> = (0..10).map(|_| rng.random_range(280.0..300.0)).collect();

        let mut cloud = vec![0.0; FRAMES_PER_HOUR * hw];
        for t in 0..FRAMES_PER_HOUR {
            let (cx, cy) = (cx0 + vx * t as f64, cy0 + vy * t as f64);
            for i in 0..SLICE_SIZE {
                for j in 0..SLICE_SIZE {
                    cloud[t * hw + i * SLICE_SIZE + j] = if cfg.spatial_mode {
                        let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
                        a * (-d2 / (2.0 * sigma * sigma)).exp()
                    } else {
                        a
                    };
                }
            }
        }

        let coverage = cloud
            .chunks_exact(hw)
            .map(|frame| frame.iter().zip(&weights).map(|(g, w)| g * w).sum::<f64>())
            .sum::<f64>()
            / FRAMES_PER_HOUR as f64;
        let attenuation = 1.0 - 0.85 * (2.0 * coverage).min(1.0);
        let clear_sky = solar::extraterrestrial_ghi(timestamp, latitude, longitude)? * 0.75;
        let eps = rng.random_range(-1.0..1.0);
        let target = (clear_sky * attenuation * (1.0 + cfg.target_noise * eps)).max(0.0);

        let mut slices = Tensor::zeros(&[FRAMES_PER_HOUR, c_n, SLICE_SIZE, SLICE_SIZE]);
        let data = slices.data_mut();
        for t in 0..FRAMES_PER_HOUR {
            for c in 0..c_n {
                let base = (t * c_n + c) * hw;
                for p in 0..hw {
                    let g = cloud[t * hw + p];
                    let noise = if cfg.pixel_noise > 0.0 {
                        rng.random_range(-cfg.pixel_noise..cfg.pixel_noise)
                    } else {
                        0.0
                    };
                    data[base + p] = if c < 6 {
                        (albedo_base[c] + (45.0 + 3.0 * c as f64) * g + noise).clamp(0.0, 100.0)
                    } else {
                        (bt_base[c - 6] - (35.0 + 2.0 * (c - 6) as f64) * g + noise)
                            .clamp(150.0, 400.0)
                    };
                }
            }
        }

        samples.push(Sample {
            // Round-robin over ten pseudo-stations so per-station
            // evaluation has groups to work with.
            station_id: format!("SYN{:02}", k % 10),
            slices,
            hour,
            day,
            month,
            altitude,
            longitude,
            latitude,
            target_ghi: Some(target),
            normalized: false,
        });
        truth.coverage.push(coverage);
        truth.attenuation.push(attenuation);
        truth.clear_sky.push(clear_sky);
    }

    Ok((Dataset { channels, samples }, truth))
}
