use serde::{Deserialize, Serialize};

use super::{ca_metrics, compute_det, per_user_eer, silhouette, DetCurve, EvalError, ProtocolScores, ScoredTimeline};

/// Summary written by the evaluate command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eer: f64,
    pub eer_per_user: f64,
    pub threshold: f64,
    pub usability: f64,
    pub tcr_s: f64,
    pub frwi_min: f64,
    pub fawi_min: f64,
    pub never_rejected: usize,
    pub silhouette: f64,
    pub genuine_attempts: usize,
    pub impostor_attempts: usize,
}

impl MetricsReport {
    /// Global EER, CA metrics at the global EER threshold, and silhouette of
    /// the embeddings grouped by user.
    pub fn build(scores: &ProtocolScores, embeddings: &[Vec<f64>], users: &[String]) -> Result<(Self, DetCurve), EvalError> {
        let (g, i) = (scores.genuine(), scores.impostor());
        let det = compute_det(&g, &i)?;
        let ca = ca_metrics(&ScoredTimeline::from_scores(scores)?, det.eer_threshold)?;
        let report = Self {
            eer: det.eer,
            eer_per_user: per_user_eer(scores)?,
            threshold: det.eer_threshold,
            usability: ca.usability,
            tcr_s: ca.tcr_s,
            frwi_min: ca.frwi_min,
            fawi_min: ca.fawi_min,
            never_rejected: ca.never_rejected,
            silhouette: silhouette(embeddings, users)?,
            genuine_attempts: g.len(),
            impostor_attempts: i.len(),
        };
        Ok((report, det))
    }

    /// Pretty JSON; NaN fields are written as `null`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct")
    }
}
