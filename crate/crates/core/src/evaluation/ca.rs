use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, ProtocolScores};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Genuine,
    Impostor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineRecord {
    /// Seconds.
    pub t: f64,
    pub score: f64,
}

/// Chronological verification scores of one source against one claimed identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTimeline {
    pub claimed: String,
    pub label: Label,
    pub records: Vec<TimelineRecord>,
}

impl ScoredTimeline {
    pub fn new(claimed: impl Into<String>, label: Label, records: Vec<TimelineRecord>) -> Result<Self, EvalError> {
        let claimed = claimed.into();
        if records.is_empty() {
            return Err(EvalError::EmptyTimeline(claimed));
        }
        if records.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(EvalError::UnorderedTimeline(claimed));
        }
        Ok(Self { claimed, label, records })
    }

    /// One timeline per (claimed identity, source user, session), ordered by time.
    pub fn from_scores(scores: &ProtocolScores) -> Result<Vec<Self>, EvalError> {
        let mut groups: BTreeMap<(&str, &str, &str), Vec<TimelineRecord>> = BTreeMap::new();
        for r in &scores.records {
            groups
                .entry((&r.claimed, &r.source, &r.session))
                .or_default()
                .push(TimelineRecord { t: r.t, score: r.score });
        }
        groups
            .into_iter()
            .map(|((claimed, source, _), mut recs)| {
                recs.sort_by(|a, b| a.t.total_cmp(&b.t));
                let label = if claimed == source { Label::Genuine } else { Label::Impostor };
                Self::new(claimed, label, recs)
            })
            .collect()
    }

    fn duration(&self) -> f64 {
        self.records.last().expect("non-empty").t - self.records[0].t
    }

    /// Longest span, first to last timestamp, of a maximal run with `accepted == want`.
    fn worst_run(&self, threshold: f64, want: bool) -> f64 {
        let mut worst = 0.0f64;
        let mut start: Option<f64> = None;
        for r in &self.records {
            if (r.score <= threshold) == want {
                let s = *start.get_or_insert(r.t);
                worst = worst.max(r.t - s);
            } else {
                start = None;
            }
        }
        worst
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaMetrics {
    /// Fraction of genuine samples accepted, averaged over genuine timelines.
    pub usability: f64,
    /// Mean seconds from an impostor timeline's first sample to its first reject.
    pub tcr_s: f64,
    /// Worst false-reject run in a genuine timeline, minutes.
    pub frwi_min: f64,
    /// Worst false-accept run in an impostor timeline, minutes.
    pub fawi_min: f64,
    /// Impostor timelines never rejected; each contributes its full duration to TCR.
    pub never_rejected: usize,
}

/// Metrics are NaN when no timeline of the required label exists.
pub fn ca_metrics(timelines: &[ScoredTimeline], threshold: f64) -> Result<CaMetrics, EvalError> {
    if let Some(t) = timelines.iter().find(|t| t.records.is_empty()) {
        return Err(EvalError::EmptyTimeline(t.claimed.clone()));
    }
    let genuine: Vec<&ScoredTimeline> = timelines.iter().filter(|t| t.label == Label::Genuine).collect();
    let impostor: Vec<&ScoredTimeline> = timelines.iter().filter(|t| t.label == Label::Impostor).collect();
    let mean = |v: Vec<f64>| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let max = |v: Vec<f64>| v.into_iter().fold(f64::NAN, f64::max);

    let usability = mean(
        genuine
            .iter()
            .map(|t| t.records.iter().filter(|r| r.score <= threshold).count() as f64 / t.records.len() as f64)
            .collect(),
    );
    let mut never_rejected = 0;
    let tcr_s = mean(
        impostor
            .iter()
            .map(|t| match t.records.iter().find(|r| r.score > threshold) {
                Some(r) => r.t - t.records[0].t,
                None => {
                    never_rejected += 1;
                    t.duration()
                }
            })
            .collect(),
    );
    let frwi_min = max(genuine.iter().map(|t| t.worst_run(threshold, false) / 60.0).collect());
    let fawi_min = max(impostor.iter().map(|t| t.worst_run(threshold, true) / 60.0).collect());
    Ok(CaMetrics {
        usability,
        tcr_s,
        frwi_min,
        fawi_min,
        never_rejected,
    })
}
