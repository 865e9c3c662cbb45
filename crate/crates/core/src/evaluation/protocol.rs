use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::parallel;

/// Enrollment samples per user when not configured.
pub const DEFAULT_ENROLL: usize = 5;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// A claimed identity's stored enrollment embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EnrollmentProfile {
    pub user: String,
    embeddings: Vec<Vec<f64>>,
}

impl EnrollmentProfile {
    pub fn new(user: impl Into<String>, embeddings: Vec<Vec<f64>>) -> Result<Self, EvalError> {
        let user = user.into();
        let Some(first) = embeddings.first() else {
            return Err(EvalError::EmptyProfile(user));
        };
        let d = first.len();
        if let Some(e) = embeddings.iter().find(|e| e.len() != d) {
            return Err(EvalError::Dimension(d, e.len()));
        }
        Ok(Self { user, embeddings })
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].len()
    }
}

/// Mean Euclidean distance from `probe` to each enrollment embedding.
pub fn verification_score(profile: &EnrollmentProfile, probe: &[f64]) -> Result<f64, EvalError> {
    if probe.len() != profile.dim() {
        return Err(EvalError::Dimension(profile.dim(), probe.len()));
    }
    let total: f64 = profile.embeddings.iter().map(|e| euclidean(e, probe)).sum();
    Ok(total / profile.embeddings.len() as f64)
}

/// One verification attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub claimed: String,
    pub source: String,
    pub session: String,
    pub t: f64,
    pub score: f64,
    pub genuine: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProtocolScores {
    pub records: Vec<ScoreRecord>,
}

impl ProtocolScores {
    pub fn genuine(&self) -> Vec<f64> {
        self.records.iter().filter(|r| r.genuine).map(|r| r.score).collect()
    }

    pub fn impostor(&self) -> Vec<f64> {
        self.records.iter().filter(|r| !r.genuine).map(|r| r.score).collect()
    }
}

/// Per test user, the first `enroll` samples (in input order) form the
/// profile; every remaining sample of every user is verified against it.
/// Users with at most `enroll` samples are left out.
pub fn run_protocol(
    embeddings: &[Vec<f64>],
    users: &[String],
    sessions: &[String],
    times: &[f64],
    enroll: usize,
) -> Result<ProtocolScores, EvalError> {
    if enroll == 0 {
        return Err(EvalError::ZeroEnroll);
    }
    let n = embeddings.len();
    for len in [users.len(), sessions.len(), times.len()] {
        if len != n {
            return Err(EvalError::LabelCount {
                embeddings: n,
                labels: len,
            });
        }
    }
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, u) in users.iter().enumerate() {
        by_user.entry(u).or_default().push(i);
    }
    let mut profiles = Vec::new();
    let mut probes = Vec::new();
    for (u, idx) in &by_user {
        if idx.len() <= enroll {
            continue;
        }
        let emb = idx[..enroll].iter().map(|&i| embeddings[i].clone()).collect();
        profiles.push(EnrollmentProfile::new(*u, emb)?);
        probes.extend_from_slice(&idx[enroll..]);
    }
    let per_profile = parallel::map(&profiles, |p| {
        probes
            .iter()
            .map(|&i| {
                Ok(ScoreRecord {
                    claimed: p.user.clone(),
                    source: users[i].clone(),
                    session: sessions[i].clone(),
                    t: times[i],
                    score: verification_score(p, &embeddings[i])?,
                    genuine: users[i] == p.user,
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()
    });
    let mut records = Vec::new();
    for r in per_profile {
        records.extend(r?);
    }
    let scores = ProtocolScores { records };
    if scores.genuine().is_empty() {
        return Err(EvalError::NoComparisons("genuine"));
    }
    if scores.impostor().is_empty() {
        return Err(EvalError::NoComparisons("impostor"));
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        let p = EnrollmentProfile::new("u", vec![vec![1.0, 2.0]]).unwrap();
        assert_eq!(verification_score(&p, &[1.0, 2.0]).unwrap(), 0.0);
        let p = EnrollmentProfile::new("u", vec![vec![1.0, 0.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(verification_score(&p, &[0.0, 0.0]).unwrap(), 2.0);
        let scaled = EnrollmentProfile::new("u", vec![vec![2.5, 0.0], vec![7.5, 0.0]]).unwrap();
        assert_eq!(verification_score(&scaled, &[0.0, 0.0]).unwrap(), 5.0);
    }

    #[test]
    fn profile_errors() {
        assert!(matches!(EnrollmentProfile::new("u", vec![]), Err(EvalError::EmptyProfile(_))));
        assert!(EnrollmentProfile::new("u", vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        let p = EnrollmentProfile::new("u", vec![vec![1.0]]).unwrap();
        assert!(verification_score(&p, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn protocol_splits_enrollment_and_probes() {
        let users: Vec<String> = ["a", "a", "a", "b", "b", "b", "c"].iter().map(|s| s.to_string()).collect();
        let emb: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64]).collect();
        let sess = vec!["s".to_string(); 7];
        let t: Vec<f64> = (0..7).map(f64::from).collect();
        let s = run_protocol(&emb, &users, &sess, &t, 2).unwrap();
        // Profiles a, b; probes a[2], b[5]; c has one sample so it is left out entirely.
        assert_eq!(s.records.len(), 4);
        assert_eq!(s.genuine().len(), 2);
        let ab = s.records.iter().find(|r| r.claimed == "a" && r.source == "b").unwrap();
        assert_eq!(ab.score, 4.5);
        assert!(run_protocol(&emb, &users, &sess, &t, 0).is_err());
    }
}
