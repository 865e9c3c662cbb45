mod common;

use behaveformer::features::Sample;
use behaveformer::pipeline::extract_corpus;

/// Per-window keystroke channel means.
fn profile(s: &Sample) -> Vec<f64> {
    let k = &s.keystroke;
    (0..k.cols())
        .map(|c| (0..k.rows).map(|r| k.get(r, c)).sum::<f64>() / k.rows as f64)
        .collect()
}

/// Mean intra-user and inter-user distances between window profiles.
fn distances(theta: f64) -> (f64, f64) {
    let corpus = common::corpus(10, 4, theta, 17);
    let samples = extract_corpus(&corpus, &common::extract_config(true)).unwrap();
    let profiles: Vec<Vec<f64>> = samples.iter().map(profile).collect();
    let (mut intra, mut inter) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let d = profiles[i]
                .iter()
                .zip(&profiles[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let acc = if samples[i].user == samples[j].user {
                &mut intra
            } else {
                &mut inter
            };
            acc.0 += d;
            acc.1 += 1;
        }
    }
    (intra.0 / intra.1 as f64, inter.0 / inter.1 as f64)
}

#[test]
fn dispersed_users_are_separable() {
    let (intra, inter) = distances(5.0);
    assert!(inter > intra, "inter {inter} <= intra {intra}");
}

#[test]
fn theta_controls_separation() {
    let (i0, e0) = distances(0.5);
    let (i1, e1) = distances(5.0);
    assert!(e1 / i1 > e0 / i0, "ratio {} at 5 vs {} at 0.5", e1 / i1, e0 / i0);
}

#[test]
fn synthetic_corpus_has_every_modality() {
    let corpus = common::corpus(4, 2, 5.0, 18);
    assert_eq!(corpus.users().len(), 4);
    assert_eq!(corpus.sessions.len(), 8);
    let samples = extract_corpus(&corpus, &common::extract_config(true)).unwrap();
    assert!(samples
        .iter()
        .all(|s| s.imu.as_ref().is_some_and(|m| m.rows == 100 && m.cols() == 36)));
}
