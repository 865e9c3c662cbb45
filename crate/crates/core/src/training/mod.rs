//! Triplet-loss metric learning and the transfer-learning path.

mod fit;
mod triplet;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::model::{ModelError, ModelInput};
use crate::numerics::{NumericsError, DEFAULT_LEARNING_RATE};

pub use fit::{fine_tune, train, validation_eer, EpochRecord, TrainResult};
pub use triplet::{sample_triplets, triplet_loss, triplet_loss_graph, Triplet};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TrainingError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("embedding dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("need at least 2 users with 2 or more sequences, found {0}")]
    TooFewUsers(usize),
    #[error("data does not match the model: {0}")]
    SchemaMismatch(String),
    #[error("non-finite loss in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("freeze prefix {0:?} matches no parameter")]
    UnknownFreeze(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for TrainingError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// Model inputs with the labels the sampler and the verification protocol need.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledInputs {
    pub inputs: Vec<ModelInput>,
    pub users: Vec<String>,
    pub sessions: Vec<String>,
    /// Window end time of each input, seconds.
    pub times: Vec<f64>,
}

impl LabeledInputs {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Number of distinct users.
    pub fn user_count(&self) -> usize {
        let mut u: Vec<&String> = self.users.iter().collect();
        u.sort();
        u.dedup();
        u.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Triplet margin α.
    pub margin: f64,
    pub learning_rate: f64,
    /// Users per batch (U).
    pub users_per_batch: usize,
    /// Sequences per user per batch (S).
    pub seqs_per_user: usize,
    pub epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Batches per epoch; 0 covers the training set about once.
    pub batches_per_epoch: usize,
    /// Enrollment samples per user for validation EER.
    pub enroll: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            learning_rate: DEFAULT_LEARNING_RATE,
            users_per_batch: 16,
            seqs_per_user: 2,
            epochs: 100,
            patience: 10,
            batches_per_epoch: 0,
            enroll: crate::evaluation::DEFAULT_ENROLL,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let err = |m: &str| Err(TrainingError::Config(m.into()));
        if !(self.margin > 0.0) {
            return err("margin must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return err("learning rate must be positive");
        }
        if self.users_per_batch < 2 {
            return err("a batch needs at least 2 users");
        }
        if self.seqs_per_user < 2 {
            return err("a batch needs at least 2 sequences per user");
        }
        if self.enroll == 0 {
            return err("enrollment count must be positive");
        }
        Ok(())
    }
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut out: W) -> Result<(), TrainingError> {
    writeln!(out, "epoch,train_loss,val_eer")?;
    for r in history {
        writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_eer)?;
    }
    Ok(())
}
