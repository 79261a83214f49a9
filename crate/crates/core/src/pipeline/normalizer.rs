//! Min–max scaling fitted on training data and applied everywhere else.
//!
//! Channel values and geographic attributes are scaled to [0, 1] by the
//! ranges seen in the training split; targets are scaled by the training
//! maximum only, preserving zero. Validation/test values may fall outside
//! [0, 1]; they are not clipped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub channel_min: Vec<f64>,
    pub channel_max: Vec<f64>,
    /// Altitude, longitude, latitude.
    pub geo_min: [f64; 3],
    pub geo_max: [f64; 3],
    pub target_max: f64,
    /// Channels whose training range was a single value; they scale to 0.
    pub degenerate_channels: Vec<bool>,
    /// Geographic attributes with a single training value; they scale
    /// to 0.
    pub degenerate_geo: [bool; 3],
    /// True when the training targets had no positive maximum; the scale
    /// falls back to 1 so scaling is the identity.
    pub degenerate_target: bool,
}

impl Normalizer {
    /// Fits scaling parameters on training samples only.
    pub fn fit(train: &[Sample]) -> Result<Normalizer> {
        if train.is_empty() {
            return Err(Error::Input("cannot fit a normalizer on no samples".into()));
        }
        let shape = train[0].slices.shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::Dimension(format!(
                "sample slices must be [T, C, H, W], got {shape:?}"
            )));
        }
        let c_n = shape[1];
        let hw = shape[2] * shape[3];

        let mut channel_min = vec![f64::INFINITY; c_n];
        let mut channel_max = vec![f64::NEG_INFINITY; c_n];
        let mut geo_min = [f64::INFINITY; 3];
        let mut geo_max = [f64::NEG_INFINITY; 3];
        let mut target_max = f64::NEG_INFINITY;
        let mut any_target = false;

        for s in train {
            if s.slices.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "inconsistent slice shapes: {:?} vs {:?}",
                    s.slices.shape(),
                    shape
                )));
            }
            if s.normalized {
                return Err(Error::State(
                    "cannot fit a normalizer on already normalized samples".into(),
                ));
            }
            let data = s.slices.data();
            for t in 0..shape[0] {
                for c in 0..c_n {
                    let base = (t * c_n + c) * hw;
                    for &v in &data[base..base + hw] {
                        channel_min[c] = channel_min[c].min(v);
                        channel_max[c] = channel_max[c].max(v);
                    }
                }
            }
            for (k, v) in [s.altitude, s.longitude, s.latitude].into_iter().enumerate() {
                geo_min[k] = geo_min[k].min(v);
                geo_max[k] = geo_max[k].max(v);
            }
            if let Some(t) = s.target_ghi {
                any_target = true;
                target_max = target_max.max(t);
            }
        }

        let degenerate_channels: Vec<bool> = (0..c_n)
            .map(|c| channel_max[c] <= channel_min[c])
            .collect();
        let degenerate_geo = [
            geo_max[0] <= geo_min[0],
            geo_max[1] <= geo_min[1],
            geo_max[2] <= geo_min[2],
        ];
        let degenerate_target = !any_target || target_max <= 0.0;
        if degenerate_target {
            target_max = 1.0;
        }

        Ok(Normalizer {
            channel_min,
            channel_max,
            geo_min,
            geo_max,
            target_max,
            degenerate_channels,
            degenerate_geo,
            degenerate_target,
        })
    }

    pub fn channel_count(&self) -> usize {
        self.channel_min.len()
    }

    fn scale(v: f64, lo: f64, hi: f64, degenerate: bool) -> f64 {
        if degenerate {
            0.0
        } else {
            (v - lo) / (hi - lo)
        }
    }

    /// Scales one geographic attribute (0 = altitude, 1 = longitude,
    /// 2 = latitude).
    pub fn scale_geo(&self, k: usize, v: f64) -> f64 {
        Self::scale(v, self.geo_min[k], self.geo_max[k], self.degenerate_geo[k])
    }

    pub fn scale_target(&self, t: f64) -> f64 {
        t / self.target_max
    }

    pub fn unscale_target(&self, t: f64) -> f64 {
        t * self.target_max
    }

    /// Min–max scales a sample's slices in place and tags it as
    /// normalized. Applying twice is a no-op.
    pub fn apply(&self, s: &mut Sample) -> Result<()> {
        if s.normalized {
            return Ok(());
        }
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
        if c_n != self.channel_count() {
            return Err(Error::Dimension(format!(
                "normalizer fitted for {} channels, sample has {}",
                self.channel_count(),
                c_n
            )));
        }
        let hw = h * w;
        let data = s.slices.data_mut();
        for t in 0..t_n {
            for c in 0..c_n {
                let (lo, hi, flat) = (
                    self.channel_min[c],
                    self.channel_max[c],
                    self.degenerate_channels[c],
                );
                let base = (t * c_n + c) * hw;
                for v in &mut data[base..base + hw] {
                    *v = Self::scale(*v, lo, hi, flat);
                }
            }
        }
        s.normalized = true;
        Ok(())
    }

    /// Inverse of [`apply`](Self::apply) for round-trip checks; degenerate
    /// channels recover their (single) training value.
    pub fn invert(&self, s: &mut Sample) -> Result<()> {
        if !s.normalized {
            return Err(Error::State("sample is not normalized".into()));
        }
        let (t_n, c_n, h, w) = (
            s.slices.shape()[0],
            s.slices.shape()[1],
            s.slices.shape()[2],
            s.slices.shape()[3],
        );
        if c_n != self.channel_count() {
            return Err(Error::Dimension(format!(
                "normalizer fitted for {} channels, sample has {}",
                self.channel_count(),
                c_n
            )));
        }
        let hw = h * w;
        let data = s.slices.data_mut();
        for t in 0..t_n {
            for c in 0..c_n {
                let (lo, hi, flat) = (
                    self.channel_min[c],
                    self.channel_max[c],
                    self.degenerate_channels[c],
                );
                let base = (t * c_n + c) * hw;
                for v in &mut data[base..base + hw] {
                    *v = if flat { lo } else { lo + *v * (hi - lo) };
                }
            }
        }
        s.normalized = false;
        Ok(())
    }
}
