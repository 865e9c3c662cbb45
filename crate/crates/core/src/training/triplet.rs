use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::TrainingError;
use crate::numerics::{Graph, NumericsError, Tensor, Var};

/// Indices into a sample list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub user: String,
    pub negative_user: String,
}

/// `max(0, |a - p| - |a - n| + margin)`.
pub fn triplet_loss(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> Result<f64, TrainingError> {
    for other in [p, n] {
        if other.len() != a.len() {
            return Err(TrainingError::Dimension(a.len(), other.len()));
        }
    }
    let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    Ok((d(a, p) - d(a, n) + margin).max(0.0))
}

/// Mean hinge loss over the rows of `[T, D]` anchor, positive and negative embeddings.
pub fn triplet_loss_graph(g: &mut Graph, a: Var, p: Var, n: Var, margin: f64) -> Result<Var, NumericsError> {
    let d_ap = g.distance(a, p)?;
    let d_an = g.distance(a, n)?;
    let diff = g.sub(d_ap, d_an)?;
    let shape = g.shape(diff).to_vec();
    let rows = shape.iter().product::<usize>();
    let m = g.leaf(Tensor::filled(&shape, margin))?;
    let shifted = g.add(diff, m)?;
    let hinge = g.relu(shifted)?;
    let total = g.sum(hinge)?;
    g.scale(total, 1.0 / rows as f64)
}

/// One batch: up to `users` distinct users, each contributing `seqs - 1`
/// triplets that share an anchor. Negatives come from another user in the batch.
pub fn sample_triplets<R: Rng>(labels: &[String], users: usize, seqs: usize, rng: &mut R) -> Result<Vec<Triplet>, TrainingError> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, u) in labels.iter().enumerate() {
        groups.entry(u).or_default().push(i);
    }
    let eligible: Vec<(&str, Vec<usize>)> = groups.into_iter().filter(|(_, v)| v.len() >= 2).collect();
    if eligible.len() < 2 {
        return Err(TrainingError::TooFewUsers(eligible.len()));
    }
    let chosen: Vec<&(&str, Vec<usize>)> = eligible.choose_multiple(rng, users.min(eligible.len())).collect();
    let mut out = Vec::new();
    for (k, (user, idx)) in chosen.iter().enumerate() {
        let picks: Vec<usize> = idx.choose_multiple(rng, seqs.max(2).min(idx.len())).copied().collect();
        for &positive in &picks[1..] {
            let mut others: Vec<usize> = (0..chosen.len()).filter(|&j| j != k).collect();
            others.shuffle(rng);
            let (neg_user, neg_idx) = chosen[others[0]];
            out.push(Triplet {
                anchor: picks[0],
                positive,
                negative: *neg_idx.choose(rng).expect("eligible users have samples"),
                user: user.to_string(),
                negative_user: neg_user.to_string(),
            });
        }
    }
    Ok(out)
}
