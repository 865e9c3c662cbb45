//! Raw keystroke / IMU session logs to fixed-shape feature sequences.

mod imu;
mod keystroke;
mod normalize;
mod session;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

pub use imu::{extract_imu_features, synchronize_resample, ResampledImu, IMU_BINS, IMU_TARGET_RANGE};
pub use keystroke::{extract_keystroke_features, DEFAULT_WINDOW};
pub use normalize::{apply_normalizer, fit_normalizer, ChannelRule, NormalizerSet, NormalizerState};
pub use session::{extract_session, split_windows, ExtractConfig, Sample};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("empty event log for session {0}")]
    EmptyLog(String),
    #[error("full keystroke schema requires release times (session {0})")]
    MissingRelease(String),
    #[error("events out of order or release before press at index {index} (session {session})")]
    InvalidEvents { session: String, index: usize },
    #[error("IMU timestamps for {sensor} must strictly increase (index {index})")]
    UnorderedImu { sensor: Sensor, index: usize },
    #[error("window [{start}, {end}] is empty or reversed")]
    InvalidWindow { start: f64, end: f64 },
    #[error("no {sensor} samples inside window [{start}, {end}]")]
    NoSamples { sensor: Sensor, start: f64, end: f64 },
    #[error("expected resampled {sensor} matrix of shape {expected:?}, got {got:?}")]
    WrongResampledShape {
        sensor: Sensor,
        expected: [usize; 2],
        got: [usize; 2],
    },
    #[error("schema {schema} is not a {wanted} schema")]
    WrongSchema { schema: String, wanted: &'static str },
    #[error("normalizer has not been fitted")]
    NotFitted,
    #[error("normalizer fitted for {fitted}, applied to {applied}")]
    SchemaMismatch { fitted: String, applied: String },
    #[error("invalid target range [{0}, {1}]")]
    InvalidRange(f64, f64),
    #[error("window length must be positive")]
    ZeroWindow,
    #[error("unknown {kind} name {name:?}")]
    UnknownName { kind: &'static str, name: String },
}

/// A single key press.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyEvent {
    pub code: u32,
    /// Seconds.
    pub press: f64,
    /// Seconds; absent when the source only records presses.
    pub release: Option<f64>,
}

impl KeyEvent {
    /// Time of the last event belonging to this key.
    pub fn last_time(&self) -> f64 {
        self.release.unwrap_or(self.press).max(self.press)
    }
}

/// Keystroke events of one session, sorted by press time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub user: String,
    pub session: String,
    events: Vec<KeyEvent>,
}

impl EventLog {
    pub fn new(user: impl Into<String>, session: impl Into<String>, events: Vec<KeyEvent>) -> Result<Self, FeatureError> {
        let session = session.into();
        for (i, e) in events.iter().enumerate() {
            let ordered = i == 0 || events[i - 1].press <= e.press;
            let released_after = e.release.is_none_or(|r| r >= e.press);
            if !ordered || !released_after || !e.press.is_finite() {
                return Err(FeatureError::InvalidEvents { session, index: i });
            }
        }
        Ok(Self {
            user: user.into(),
            session,
            events,
        })
    }

    pub fn events(&self) -> &[KeyEvent] {
        &self.events
    }

    pub fn has_release_times(&self) -> bool {
        !self.events.is_empty() && self.events.iter().all(|e| e.release.is_some())
    }

    /// `[first press, last event]` span.
    pub fn span(&self) -> Option<(f64, f64)> {
        let first = self.events.first()?.press;
        let last = self.events.iter().map(KeyEvent::last_time).fold(f64::NEG_INFINITY, f64::max);
        Some((first, last))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensor {
    Accelerometer,
    Gyroscope,
    Magnetometer,
}

impl Sensor {
    /// Canonical concatenation order.
    pub const ALL: [Sensor; 3] = [Sensor::Accelerometer, Sensor::Gyroscope, Sensor::Magnetometer];

    pub fn short(self) -> char {
        match self {
            Sensor::Accelerometer => 'A',
            Sensor::Gyroscope => 'G',
            Sensor::Magnetometer => 'M',
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sensor::Accelerometer => "accelerometer",
            Sensor::Gyroscope => "gyroscope",
            Sensor::Magnetometer => "magnetometer",
        })
    }
}

impl FromStr for Sensor {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "accelerometer" | "acc" | "a" => Ok(Sensor::Accelerometer),
            "gyroscope" | "gyro" | "g" => Ok(Sensor::Gyroscope),
            "magnetometer" | "mag" | "m" => Ok(Sensor::Magnetometer),
            _ => Err(FeatureError::UnknownName {
                kind: "sensor",
                name: s.to_string(),
            }),
        }
    }
}

/// Sorted, de-duplicated list of enabled sensors.
pub fn canonical_sensors(sensors: &[Sensor]) -> Vec<Sensor> {
    let mut s = sensors.to_vec();
    s.sort();
    s.dedup();
    s
}

/// Parses modality flags such as `"KAGM"` or `"K+A+G"` into enabled sensors.
/// `K` (keystroke) is always implied.
pub fn parse_modalities(flags: &str) -> Result<Vec<Sensor>, FeatureError> {
    let mut out = Vec::new();
    for c in flags.chars().filter(|c| !matches!(c, '+' | ',' | ' ')) {
        match c.to_ascii_uppercase() {
            'K' => {}
            'A' => out.push(Sensor::Accelerometer),
            'G' => out.push(Sensor::Gyroscope),
            'M' => out.push(Sensor::Magnetometer),
            _ => {
                return Err(FeatureError::UnknownName {
                    kind: "modality",
                    name: c.to_string(),
                })
            }
        }
    }
    Ok(canonical_sensors(&out))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Per-sensor IMU streams of one session.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImuLog {
    streams: [Vec<ImuSample>; 3],
}

impl ImuLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, sensor: Sensor, samples: Vec<ImuSample>) -> Result<(), FeatureError> {
        if let Some(i) = samples.windows(2).position(|w| w[1].t <= w[0].t) {
            return Err(FeatureError::UnorderedImu { sensor, index: i + 1 });
        }
        self.streams[sensor.index()] = samples;
        Ok(())
    }

    pub fn samples(&self, sensor: Sensor) -> &[ImuSample] {
        &self.streams[sensor.index()]
    }

    pub fn has(&self, sensor: Sensor) -> bool {
        !self.streams[sensor.index()].is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemaKind {
    FullKeystroke,
    HumidbKeystroke,
    Imu,
}

impl FromStr for SchemaKind {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full-keystroke" | "full" => Ok(Self::FullKeystroke),
            "humidb-keystroke" | "humidb" => Ok(Self::HumidbKeystroke),
            "imu" => Ok(Self::Imu),
            _ => Err(FeatureError::UnknownName {
                kind: "schema",
                name: s.to_string(),
            }),
        }
    }
}

/// Channel layout of a feature sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub kind: SchemaKind,
    pub labels: Vec<String>,
    /// Enabled sensors for IMU schemas; empty otherwise.
    #[serde(default)]
    pub sensors: Vec<Sensor>,
}

pub const FULL_KEYSTROKE_LABELS: [&str; 10] = [
    "HL", "DU_di", "UD_di", "DD_di", "UU_di", "DU_tri", "UD_tri", "DD_tri", "UU_tri", "ASCII",
];
pub const HUMIDB_KEYSTROKE_LABELS: [&str; 3] = ["DD_di", "DD_tri", "ASCII"];
const IMU_CHANNEL_LABELS: [&str; 12] = ["x", "y", "z", "dx", "dy", "dz", "ddx", "ddy", "ddz", "fft_x", "fft_y", "fft_z"];

impl FeatureSchema {
    pub fn full_keystroke() -> Self {
        Self {
            kind: SchemaKind::FullKeystroke,
            labels: FULL_KEYSTROKE_LABELS.iter().map(|s| s.to_string()).collect(),
            sensors: vec![],
        }
    }

    pub fn humidb_keystroke() -> Self {
        Self {
            kind: SchemaKind::HumidbKeystroke,
            labels: HUMIDB_KEYSTROKE_LABELS.iter().map(|s| s.to_string()).collect(),
            sensors: vec![],
        }
    }

    /// 12 channels per enabled sensor, in canonical sensor order.
    pub fn imu(sensors: &[Sensor]) -> Self {
        let sensors = canonical_sensors(sensors);
        let labels = sensors
            .iter()
            .flat_map(|s| IMU_CHANNEL_LABELS.iter().map(move |l| format!("{}_{l}", s.short())))
            .collect();
        Self {
            kind: SchemaKind::Imu,
            labels,
            sensors,
        }
    }

    pub fn keystroke(kind: SchemaKind) -> Self {
        match kind {
            SchemaKind::HumidbKeystroke => Self::humidb_keystroke(),
            _ => Self::full_keystroke(),
        }
    }

    pub fn channels(&self) -> usize {
        self.labels.len()
    }

    pub fn is_keystroke(&self) -> bool {
        self.kind != SchemaKind::Imu
    }

    pub fn name(&self) -> String {
        match self.kind {
            SchemaKind::FullKeystroke => "full-keystroke".into(),
            SchemaKind::HumidbKeystroke => "humidb-keystroke".into(),
            SchemaKind::Imu => {
                let s: String = self.sensors.iter().map(|s| s.short()).collect();
                format!("imu[{s}]")
            }
        }
    }
}

/// Fixed-shape `rows × cols` feature matrix for one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub rows: usize,
    pub schema: FeatureSchema,
    pub user: String,
    pub session: String,
    pub values: Vec<f64>,
}

impl FeatureSequence {
    pub fn cols(&self) -> usize {
        self.schema.channels()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let m = self.cols();
        &self.values[r * m..(r + 1) * m]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.cols()], self.values.clone()).expect("rows × cols values")
    }
}
