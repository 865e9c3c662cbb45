#![allow(dead_code)]

use behaveformer::datasets::{split_users, synthesize, Corpus, SplitSpec, SynthSpec};
use behaveformer::features::{ExtractConfig, Sensor};
use behaveformer::model::{BehaveFormer, BehaveFormerConfig};
use behaveformer::pipeline::{extract_corpus, model_config, prepare, ModelOverrides, Prepared};
use behaveformer::training::TrainConfig;

pub const WINDOW: usize = 20;
pub const ENROLL: usize = 3;

pub fn corpus(users: usize, sessions: usize, theta: f64, seed: u64) -> Corpus {
    let mut spec = SynthSpec::new(users, sessions, theta, seed);
    spec.keys_per_session = 100;
    synthesize(&spec).unwrap()
}

pub fn extract_config(dual: bool) -> ExtractConfig {
    ExtractConfig {
        window: WINDOW,
        sensors: if dual { Sensor::ALL.to_vec() } else { vec![] },
        ..Default::default()
    }
}

/// Extracts `corpus` and splits its users `train / test / validation`.
pub fn prepared(corpus: &Corpus, cfg: &ExtractConfig, counts: (usize, usize, usize), seed: u64) -> Prepared {
    let samples = extract_corpus(corpus, cfg).unwrap();
    let spec = SplitSpec {
        seed,
        train: counts.0,
        test: counts.1,
        validation: counts.2,
    };
    let splits = split_users(&corpus.users(), &spec).unwrap();
    prepare(&samples, &splits, cfg).unwrap()
}

pub fn miniature(cfg: &ExtractConfig) -> BehaveFormerConfig {
    model_config(
        cfg,
        &ModelOverrides {
            channel_heads: Some(5),
            ..ModelOverrides::miniature()
        },
    )
}

pub fn model(cfg: &ExtractConfig, seed: u64) -> BehaveFormer {
    BehaveFormer::new(miniature(cfg), seed).unwrap()
}

pub fn train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        enroll: ENROLL,
        seed,
        batches_per_epoch: 4,
        ..Default::default()
    }
}
