use serde::{Deserialize, Serialize};

use super::{ExtractConfig, FeatureError, FeatureSchema, FeatureSequence, Sample, IMU_TARGET_RANGE};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum ChannelRule {
    /// Already in seconds or `[0, 1]`.
    PassThrough,
    MinMax {
        min: f64,
        max: f64,
    },
}

/// Per-channel scaling fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizerState {
    pub schema: FeatureSchema,
    pub target: (f64, f64),
    pub channels: Vec<ChannelRule>,
}

impl NormalizerState {
    /// A state that rejects every `apply`.
    pub fn unfitted(schema: FeatureSchema, target: (f64, f64)) -> Self {
        Self {
            schema,
            target,
            channels: Vec::new(),
        }
    }

    pub fn is_fitted(&self) -> bool {
        !self.channels.is_empty()
    }
}

/// Fits min-max scaling to `target` for IMU channels; keystroke channels pass through.
pub fn fit_normalizer(train: &[FeatureSequence], schema: &FeatureSchema, target: (f64, f64)) -> Result<NormalizerState, FeatureError> {
    if !(target.0 < target.1) {
        return Err(FeatureError::InvalidRange(target.0, target.1));
    }
    if let Some(s) = train.iter().find(|s| s.schema != *schema) {
        return Err(FeatureError::SchemaMismatch {
            fitted: schema.name(),
            applied: s.schema.name(),
        });
    }
    if train.is_empty() {
        return Ok(NormalizerState::unfitted(schema.clone(), target));
    }
    let m = schema.channels();
    let channels = if schema.is_keystroke() {
        vec![ChannelRule::PassThrough; m]
    } else {
        (0..m)
            .map(|c| {
                let (min, max) = train
                    .iter()
                    .flat_map(|s| (0..s.rows).map(move |r| s.get(r, c)))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                ChannelRule::MinMax { min, max }
            })
            .collect()
    };
    Ok(NormalizerState {
        schema: schema.clone(),
        target,
        channels,
    })
}

/// Scales `seq` with a fitted state. Out-of-range values are clamped to the
/// target range; constant training channels map to the range minimum.
pub fn apply_normalizer(state: &NormalizerState, seq: &FeatureSequence) -> Result<FeatureSequence, FeatureError> {
    if !state.is_fitted() {
        return Err(FeatureError::NotFitted);
    }
    if state.schema != seq.schema {
        return Err(FeatureError::SchemaMismatch {
            fitted: state.schema.name(),
            applied: seq.schema.name(),
        });
    }
    let (lo, hi) = state.target;
    let m = seq.cols();
    let mut out = seq.clone();
    for (i, v) in out.values.iter_mut().enumerate() {
        if let ChannelRule::MinMax { min, max } = state.channels[i % m] {
            *v = if max > min {
                (lo + (*v - min) / (max - min) * (hi - lo)).clamp(lo, hi)
            } else {
                lo
            };
        }
    }
    Ok(out)
}

/// Normalizers for both modalities of a [`Sample`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizerSet {
    pub keystroke: NormalizerState,
    pub imu: Option<NormalizerState>,
}

impl NormalizerSet {
    /// Fits on training-split samples only.
    pub fn fit(train: &[Sample], cfg: &ExtractConfig) -> Result<Self, FeatureError> {
        let ks: Vec<FeatureSequence> = train.iter().map(|s| s.keystroke.clone()).collect();
        let keystroke = fit_normalizer(&ks, &cfg.keystroke_schema(), IMU_TARGET_RANGE)?;
        let imu = match cfg.imu_schema() {
            None => None,
            Some(schema) => {
                let seqs: Vec<FeatureSequence> = train.iter().filter_map(|s| s.imu.clone()).collect();
                Some(fit_normalizer(&seqs, &schema, IMU_TARGET_RANGE)?)
            }
        };
        Ok(Self { keystroke, imu })
    }

    pub fn apply(&self, sample: &Sample) -> Result<Sample, FeatureError> {
        let imu = match (&self.imu, &sample.imu) {
            (Some(state), Some(seq)) => Some(apply_normalizer(state, seq)?),
            (None, None) => None,
            (Some(state), None) => {
                return Err(FeatureError::SchemaMismatch {
                    fitted: state.schema.name(),
                    applied: "keystroke-only sample".into(),
                })
            }
            (None, Some(seq)) => {
                return Err(FeatureError::SchemaMismatch {
                    fitted: "keystroke only".into(),
                    applied: seq.schema.name(),
                })
            }
        };
        Ok(Sample {
            keystroke: apply_normalizer(&self.keystroke, &sample.keystroke)?,
            imu,
            ..sample.clone()
        })
    }
}
