use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{canonical_sensors, FeatureError, FeatureSchema, FeatureSequence, ImuLog, Sensor};

/// Fixed IMU sequence length after resampling.
pub const IMU_BINS: usize = 100;
/// Min-max target range for IMU channels.
pub const IMU_TARGET_RANGE: (f64, f64) = (0.0, 10.0);

/// Per-sensor `bins × 3` matrices over one time window.
#[derive(Clone, Debug, PartialEq)]
pub struct ResampledImu {
    pub bins: usize,
    /// `(sensor, row-major bins × [x, y, z])`, canonical sensor order.
    pub sensors: Vec<(Sensor, Vec<f64>)>,
}

impl ResampledImu {
    pub fn get(&self, sensor: Sensor) -> Option<&[f64]> {
        self.sensors.iter().find(|(s, _)| *s == sensor).map(|(_, v)| v.as_slice())
    }
}

/// Averages raw samples into `bins` equal-width bins over `[start, end]`.
///
/// Empty bins are linearly interpolated between the nearest non-empty bins;
/// leading/trailing empty bins copy the nearest non-empty one.
pub fn synchronize_resample(imu: &ImuLog, sensors: &[Sensor], (start, end): (f64, f64), bins: usize) -> Result<ResampledImu, FeatureError> {
    if !(start < end) || bins == 0 {
        return Err(FeatureError::InvalidWindow { start, end });
    }
    let width = (end - start) / bins as f64;
    let mut out = Vec::new();
    for sensor in canonical_sensors(sensors) {
        let mut sums = vec![[0.0f64; 3]; bins];
        let mut counts = vec![0usize; bins];
        for s in imu.samples(sensor) {
            if s.t < start || s.t > end {
                continue;
            }
            let b = (((s.t - start) / width) as usize).min(bins - 1);
            sums[b][0] += s.x;
            sums[b][1] += s.y;
            sums[b][2] += s.z;
            counts[b] += 1;
        }
        let filled: Vec<usize> = (0..bins).filter(|&b| counts[b] > 0).collect();
        if filled.is_empty() {
            return Err(FeatureError::NoSamples { sensor, start, end });
        }
        let mut values = vec![0.0; bins * 3];
        for &b in &filled {
            for a in 0..3 {
                values[b * 3 + a] = sums[b][a] / counts[b] as f64;
            }
        }
        // Fill gaps.
        let (first, last) = (filled[0], *filled.last().expect("non-empty"));
        for b in 0..first {
            for a in 0..3 {
                values[b * 3 + a] = values[first * 3 + a];
            }
        }
        for b in last + 1..bins {
            for a in 0..3 {
                values[b * 3 + a] = values[last * 3 + a];
            }
        }
        for pair in filled.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            for b in lo + 1..hi {
                let frac = (b - lo) as f64 / (hi - lo) as f64;
                for a in 0..3 {
                    let (vl, vh) = (values[lo * 3 + a], values[hi * 3 + a]);
                    values[b * 3 + a] = vl + frac * (vh - vl);
                }
            }
        }
        out.push((sensor, values));
    }
    Ok(ResampledImu { bins, sensors: out })
}

/// `order`-th forward difference, padded to `x.len()` by repeating the last value.
fn difference(x: &[f64], order: usize) -> Vec<f64> {
    let mut d = x.to_vec();
    for _ in 0..order {
        if d.len() < 2 {
            return vec![0.0; x.len()];
        }
        d = d.windows(2).map(|w| w[1] - w[0]).collect();
    }
    let last = *d.last().expect("non-empty");
    d.resize(x.len(), last);
    d
}

fn fft_magnitude(fft: &Arc<dyn Fft<f64>>, x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

/// 12 channels per sensor and timestep: raw xyz, first and second
/// differences, and DFT magnitudes of the whole channel aligned by index.
pub fn extract_imu_features(resampled: &ResampledImu, sensors: &[Sensor]) -> Result<FeatureSequence, FeatureError> {
    let sensors = canonical_sensors(sensors);
    let schema = FeatureSchema::imu(&sensors);
    let n = resampled.bins;
    let m = schema.channels();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut values = vec![0.0; n * m];
    for (si, &sensor) in sensors.iter().enumerate() {
        let raw = resampled.get(sensor).ok_or(FeatureError::NoSamples {
            sensor,
            start: f64::NAN,
            end: f64::NAN,
        })?;
        if raw.len() != n * 3 {
            return Err(FeatureError::WrongResampledShape {
                sensor,
                expected: [n, 3],
                got: [raw.len() / 3, 3],
            });
        }
        for axis in 0..3 {
            let x: Vec<f64> = (0..n).map(|t| raw[t * 3 + axis]).collect();
            let channels = [x.clone(), difference(&x, 1), difference(&x, 2), fft_magnitude(&fft, &x)];
            for (group, ch) in channels.iter().enumerate() {
                let col = si * 12 + group * 3 + axis;
                for (t, v) in ch.iter().enumerate() {
                    values[t * m + col] = *v;
                }
            }
        }
    }
    Ok(FeatureSequence {
        rows: n,
        schema,
        user: String::new(),
        session: String::new(),
        values,
    })
}
