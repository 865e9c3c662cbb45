//! End-to-end helpers shared by the CLI and the acceptance suite.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{Corpus, Splits};
use crate::evaluation::{run_protocol, DetCurve, MetricsReport, ProtocolScores};
use crate::features::{extract_session, ExtractConfig, NormalizerSet, Sample, SchemaKind};
use crate::model::{BehaveFormer, BehaveFormerConfig, ModelInput, StdatConfig};
use crate::parallel;
use crate::training::LabeledInputs;
use crate::Result;

/// Extracts every session of a corpus, in corpus order.
pub fn extract_corpus(corpus: &Corpus, cfg: &ExtractConfig) -> Result<Vec<Sample>> {
    let sessions: Vec<_> = corpus.sessions.values().collect();
    let per = parallel::map(&sessions, |s| extract_session(&s.events, s.imu.as_ref(), cfg));
    let mut out = Vec::new();
    for r in per {
        out.extend(r?);
    }
    Ok(out)
}

/// Samples whose user is in `users`, order preserved.
pub fn select(samples: &[Sample], users: &[String]) -> Vec<Sample> {
    samples.iter().filter(|s| users.contains(&s.user)).cloned().collect()
}

/// Normalizes samples into model inputs with their labels.
pub fn to_labeled(samples: &[Sample], norm: &NormalizerSet) -> Result<LabeledInputs> {
    let mut out = LabeledInputs::default();
    for s in samples {
        let n = norm.apply(s)?;
        out.inputs.push(ModelInput {
            keystroke: n.keystroke.to_tensor(),
            imu: n.imu.as_ref().map(|f| f.to_tensor()),
        });
        out.users.push(s.user.clone());
        out.sessions.push(s.session.clone());
        out.times.push(s.t_end);
    }
    Ok(out)
}

/// Train / validation / test inputs with a normalizer fitted on the training users.
pub struct Prepared {
    pub normalizers: NormalizerSet,
    pub train: LabeledInputs,
    pub validation: LabeledInputs,
    pub test: LabeledInputs,
}

pub fn prepare(samples: &[Sample], splits: &Splits, cfg: &ExtractConfig) -> Result<Prepared> {
    let train = select(samples, &splits.train);
    let normalizers = NormalizerSet::fit(&train, cfg)?;
    Ok(Prepared {
        train: to_labeled(&train, &normalizers)?,
        validation: to_labeled(&select(samples, &splits.validation), &normalizers)?,
        test: to_labeled(&select(samples, &splits.test), &normalizers)?,
        normalizers,
    })
}

/// Optional hyperparameter overrides applied to every tower.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelOverrides {
    pub blocks: Option<usize>,
    pub hidden: Option<usize>,
    pub gaussians: Option<usize>,
    pub dropout: Option<f64>,
    pub channel_heads: Option<usize>,
}

impl ModelOverrides {
    /// One block and a narrow FNN: fast enough for desk-scale runs.
    pub fn miniature() -> Self {
        Self {
            blocks: Some(1),
            hidden: Some(32),
            ..Self::default()
        }
    }

    fn apply(&self, mut c: StdatConfig) -> StdatConfig {
        c.blocks = self.blocks.unwrap_or(c.blocks);
        c.hidden = self.hidden.unwrap_or(c.hidden);
        c.gaussians = self.gaussians.unwrap_or(c.gaussians);
        c.dropout = self.dropout.unwrap_or(c.dropout);
        c.channel_heads = self.channel_heads.unwrap_or(c.channel_heads);
        c
    }
}

/// Tower presets matching the feature layout: the reduced keystroke schema
/// gets the 3-channel tower, keystroke-only data the 6-block tower, and
/// keystroke + IMU data the 5-block tower plus an IMU tower.
pub fn model_config(extract: &ExtractConfig, overrides: &ModelOverrides) -> BehaveFormerConfig {
    let n = extract.window;
    let ks = match (extract.keystroke, extract.sensors.is_empty()) {
        (SchemaKind::HumidbKeystroke, _) => StdatConfig::keystroke_humidb(n),
        (_, true) => StdatConfig::keystroke_aalto(n),
        (_, false) => StdatConfig::keystroke_hmog(n),
    };
    let ks = overrides.apply(ks);
    match extract.imu_schema() {
        None => BehaveFormerConfig::keystroke_only(ks),
        Some(schema) => {
            let mut imu = overrides.apply(StdatConfig::imu(schema.channels()));
            // The IMU length is fixed, so keep its head count valid.
            if !imu.seq_len.is_multiple_of(imu.channel_heads) {
                imu.channel_heads = StdatConfig::imu(schema.channels()).channel_heads;
            }
            BehaveFormerConfig::dual(ks, imu)
        }
    }
}

pub struct Evaluation {
    pub report: MetricsReport,
    pub det: DetCurve,
    pub scores: ProtocolScores,
    pub embeddings: Vec<Vec<f64>>,
}

/// Enrollment-verification protocol and metrics on already-normalized inputs.
pub fn evaluate(model: &BehaveFormer, data: &LabeledInputs, enroll: usize) -> Result<Evaluation> {
    let embeddings = model.embed(&data.inputs)?;
    let scores = run_protocol(&embeddings, &data.users, &data.sessions, &data.times, enroll)?;
    let (report, det) = MetricsReport::build(&scores, &embeddings, &data.users)?;
    Ok(Evaluation {
        report,
        det,
        scores,
        embeddings,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synthesize, SynthSpec};
    use crate::features::{Sensor, DEFAULT_WINDOW};

    #[test]
    fn presets_follow_feature_layout() {
        let ks_only = model_config(&ExtractConfig::default(), &ModelOverrides::default());
        assert_eq!((ks_only.keystroke.blocks, ks_only.keystroke.channels), (6, 10));
        assert!(ks_only.imu.is_none());
        for (sensors, width) in [(vec![Sensor::Accelerometer], 12), (Sensor::ALL.to_vec(), 36)] {
            let cfg = ExtractConfig {
                sensors,
                ..Default::default()
            };
            let c = model_config(&cfg, &ModelOverrides::default());
            assert_eq!(c.keystroke.blocks, 5);
            assert_eq!(c.imu.as_ref().unwrap().channels, width);
            c.validate().unwrap();
        }
        let h = model_config(
            &ExtractConfig {
                keystroke: SchemaKind::HumidbKeystroke,
                window: DEFAULT_WINDOW,
                sensors: vec![],
            },
            &ModelOverrides::miniature(),
        );
        assert_eq!((h.keystroke.channels, h.keystroke.temporal_heads, h.keystroke.blocks), (3, 3, 1));
    }

    #[test]
    fn synthetic_corpus_extracts_without_drops() {
        let corpus = synthesize(&SynthSpec::new(3, 2, 5.0, 2)).unwrap();
        let cfg = ExtractConfig {
            window: 20,
            sensors: Sensor::ALL.to_vec(),
            ..Default::default()
        };
        let samples = extract_corpus(&corpus, &cfg).unwrap();
        assert_eq!(samples.len(), 3 * 2 * 5);
        assert!(samples.iter().all(|s| s.imu.as_ref().is_some_and(|f| f.cols() == 36)));
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
