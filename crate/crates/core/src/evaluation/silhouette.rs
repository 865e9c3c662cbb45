use std::collections::BTreeMap;

use super::{euclidean, EvalError};
use crate::parallel;

/// Mean silhouette coefficient under Euclidean distance.
/// Points in singleton clusters score 0.
pub fn silhouette<L: Ord>(embeddings: &[Vec<f64>], labels: &[L]) -> Result<f64, EvalError> {
    if embeddings.len() != labels.len() {
        return Err(EvalError::LabelCount {
            embeddings: embeddings.len(),
            labels: labels.len(),
        });
    }
    let mut ids: BTreeMap<&L, usize> = BTreeMap::new();
    for l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    let k = ids.len();
    if k < 2 {
        return Err(EvalError::SingleLabel(k));
    }
    let cluster: Vec<usize> = labels.iter().map(|l| ids[l]).collect();
    let mut sizes = vec![0usize; k];
    for &c in &cluster {
        sizes[c] += 1;
    }
    let scores = parallel::map_range(embeddings.len(), |i| {
        let own = cluster[i];
        if sizes[own] < 2 {
            return 0.0;
        }
        let mut sums = vec![0.0; k];
        for (j, e) in embeddings.iter().enumerate() {
            if j != i {
                sums[cluster[j]] += euclidean(&embeddings[i], e);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m == 0.0 {
            0.0
        } else {
            (b - a) / m
        }
    });
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
