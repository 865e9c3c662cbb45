use crate::datasets::DatasetError;
use crate::evaluation::EvalError;
use crate::features::FeatureError;
use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::training::TrainingError;

/// Crate-wide error, qualified by the module that raised it.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("numerics: {0}")]
    Numerics(#[from] NumericsError),
    #[error("features: {0}")]
    Features(#[from] FeatureError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("training: {0}")]
    Training(#[from] TrainingError),
    #[error("evaluation: {0}")]
    Evaluation(#[from] EvalError),
    #[error("datasets: {0}")]
    Datasets(#[from] DatasetError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
