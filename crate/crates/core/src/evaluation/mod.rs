//! Enrollment-verification scoring, DET/EER, continuous-authentication
//! metrics and cluster separation.
//!
//! Scores are distances: lower means more likely genuine, and a sample is
//! accepted iff its score is at most the decision threshold.

mod ca;
mod det;
mod protocol;
mod report;
mod silhouette;

pub use ca::{ca_metrics, CaMetrics, Label, ScoredTimeline, TimelineRecord};
pub use det::{compute_det, per_user_eer, write_det_csv, write_det_svg, DetCurve, DetPoint};
pub use protocol::{euclidean, run_protocol, verification_score, EnrollmentProfile, ProtocolScores, ScoreRecord, DEFAULT_ENROLL};
pub use report::MetricsReport;
pub use silhouette::silhouette;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("enrollment profile for {0} is empty")]
    EmptyProfile(String),
    #[error("embedding dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("{0} score list is empty")]
    EmptyScores(&'static str),
    #[error("timeline for {0} has no samples")]
    EmptyTimeline(String),
    #[error("timestamps decrease in timeline for {0}")]
    UnorderedTimeline(String),
    #[error("silhouette needs at least two labels, got {0}")]
    SingleLabel(usize),
    #[error("{embeddings} embeddings but {labels} labels")]
    LabelCount { embeddings: usize, labels: usize },
    #[error("enrollment count must be at least 1")]
    ZeroEnroll,
    #[error("protocol produced no {0} comparisons")]
    NoComparisons(&'static str),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
