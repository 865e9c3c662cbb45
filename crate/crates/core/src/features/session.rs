use serde::{Deserialize, Serialize};

use super::{
    canonical_sensors, extract_imu_features, extract_keystroke_features, synchronize_resample, EventLog, FeatureError, FeatureSchema,
    FeatureSequence, ImuLog, SchemaKind, Sensor, DEFAULT_WINDOW, IMU_BINS,
};

/// How sessions are cut into samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub keystroke: SchemaKind,
    pub window: usize,
    /// Enabled IMU sensors; empty for keystroke-only extraction.
    pub sensors: Vec<Sensor>,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            keystroke: SchemaKind::FullKeystroke,
            window: DEFAULT_WINDOW,
            sensors: vec![],
        }
    }
}

impl ExtractConfig {
    pub fn keystroke_schema(&self) -> FeatureSchema {
        FeatureSchema::keystroke(self.keystroke)
    }

    pub fn imu_schema(&self) -> Option<FeatureSchema> {
        (!self.sensors.is_empty()).then(|| FeatureSchema::imu(&self.sensors))
    }
}

/// One window of a session: keystroke features plus optional synchronized IMU features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub user: String,
    pub session: String,
    pub window: usize,
    /// Timestamp of the window's last event, seconds.
    pub t_end: f64,
    pub keystroke: FeatureSequence,
    pub imu: Option<FeatureSequence>,
}

/// Cuts a log into consecutive non-overlapping windows of `window` keys.
///
/// A trailing partial window is dropped unless it is the only one.
pub fn split_windows(log: &EventLog, window: usize) -> Result<Vec<EventLog>, FeatureError> {
    if window == 0 {
        return Err(FeatureError::ZeroWindow);
    }
    let events = log.events();
    if events.is_empty() {
        return Err(FeatureError::EmptyLog(log.session.clone()));
    }
    if events.len() < window {
        return Ok(vec![log.clone()]);
    }
    events
        .chunks_exact(window)
        .map(|c| EventLog::new(log.user.clone(), log.session.clone(), c.to_vec()))
        .collect()
}

/// Extracts every window of one session.
///
/// Each window's IMU features cover the window's `[first press, last event]` span.
pub fn extract_session(log: &EventLog, imu: Option<&ImuLog>, cfg: &ExtractConfig) -> Result<Vec<Sample>, FeatureError> {
    let ks_schema = cfg.keystroke_schema();
    let sensors = canonical_sensors(&cfg.sensors);
    split_windows(log, cfg.window)?
        .into_iter()
        .enumerate()
        .map(|(w, part)| {
            let keystroke = extract_keystroke_features(&part, &ks_schema, cfg.window)?;
            let (start, end) = part.span().expect("non-empty window");
            let imu = match (sensors.is_empty(), imu) {
                (true, _) => None,
                (false, None) => {
                    return Err(FeatureError::NoSamples {
                        sensor: sensors[0],
                        start,
                        end,
                    })
                }
                (false, Some(imu)) => {
                    let r = synchronize_resample(imu, &sensors, (start, end), IMU_BINS)?;
                    let mut f: FeatureSequence = extract_imu_features(&r, &sensors)?;
                    f.user = log.user.clone();
                    f.session = log.session.clone();
                    Some(f)
                }
            };
            Ok(Sample {
                user: log.user.clone(),
                session: log.session.clone(),
                window: w,
                t_end: end,
                keystroke,
                imu,
            })
        })
        .collect()
}
