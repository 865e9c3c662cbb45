//! Corpus ingestion, user splits, the synthetic generator, and persistence
//! of checkpoints, feature stores and embeddings.

mod checkpoint;
mod ingest;
mod split;
mod store;
mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::features::{EventLog, FeatureError, ImuLog, SchemaKind, Sensor};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use ingest::{ingest, ingest_readers, write_corpus};
pub use split::{read_split_manifest, split_users, write_split_manifest, Split, SplitSpec, Splits};
pub use store::{load_feature_store, save_feature_store, write_embeddings_csv, FeatureStore};
pub use synth::{synthesize, SynthSpec};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(String),
    #[error("{file}:{line}: {detail}")]
    Malformed { file: String, line: u64, detail: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("need {needed} users, only {available} available")]
    InsufficientUsers { needed: usize, available: usize },
    #[error("invalid synthesis request: {0}")]
    InvalidSpec(String),
    #[error("checkpoint is not a behaveformer checkpoint")]
    BadMagic,
    #[error("checkpoint version {found}, this build reads {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint integrity digest mismatch")]
    Digest,
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// Declares which files and columns a dataset provides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Manifest {
    pub name: String,
    pub keystroke_file: String,
    /// False for sources that record key presses only.
    pub release_times: bool,
    pub imu_file: Option<String>,
    /// IMU sensors every kept session must provide.
    pub sensors: Vec<Sensor>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            name: "corpus".into(),
            keystroke_file: "keystroke.csv".into(),
            release_times: true,
            imu_file: None,
            sensors: vec![],
        }
    }
}

impl Manifest {
    pub fn from_toml(text: &str) -> Result<Self, DatasetError> {
        let m: Self = toml::from_str(text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        if !m.sensors.is_empty() && m.imu_file.is_none() {
            return Err(DatasetError::Manifest("sensors listed without an imu_file".into()));
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain struct")
    }

    /// Sources without release times only support the reduced keystroke schema.
    pub fn keystroke_schema(&self) -> SchemaKind {
        if self.release_times {
            SchemaKind::FullKeystroke
        } else {
            SchemaKind::HumidbKeystroke
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub events: EventLog,
    pub imu: Option<ImuLog>,
}

/// A session or user excluded at load, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub user: String,
    pub session: Option<String>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub manifest: Manifest,
    /// Keyed by `(user, session)`.
    pub sessions: BTreeMap<(String, String), Session>,
    pub dropped: Vec<Dropped>,
}

impl Corpus {
    /// Distinct users, sorted.
    pub fn users(&self) -> Vec<String> {
        let mut u: Vec<String> = self.sessions.keys().map(|(u, _)| u.clone()).collect();
        u.dedup();
        u
    }

    pub fn dropped_users(&self) -> usize {
        self.dropped.iter().filter(|d| d.session.is_none()).count()
    }
}
