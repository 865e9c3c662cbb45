use std::path::Path;

use anyhow::{bail, Context, Result};
use behaveformer::datasets::{
    ingest, load_checkpoint, load_feature_store, read_split_manifest, save_checkpoint, save_feature_store, split_users, synthesize,
    write_corpus, write_embeddings_csv, write_split_manifest, Checkpoint, FeatureStore, Manifest, Split, SplitSpec, Splits, SynthSpec,
};
use behaveformer::evaluation::{compute_det, write_det_csv, write_det_svg};
use behaveformer::features::{parse_modalities, ExtractConfig, Sample, SchemaKind};
use behaveformer::model::BehaveFormer;
use behaveformer::pipeline::{self, extract_corpus, model_config, prepare, select, to_labeled, ModelOverrides};
use behaveformer::training::{self, write_history_csv, TrainConfig, TrainResult};
use serde::{Deserialize, Serialize};

use crate::run::{config_digest, Run};
use crate::{DetArgs, EmbedArgs, EvaluateArgs, ExtractArgs, FinetuneArgs, SynthArgs, TrainArgs, TrainFlags};

const CHECKPOINT: &str = "checkpoint.bhvf";
const FEATURES: &str = "features.jsonl";
const SPLITS: &str = "splits.csv";

/// Qualifies core errors with the module that raised them.
trait Qualify<T> {
    fn q(self) -> Result<T>;
}

impl<T, E: Into<behaveformer::Error>> Qualify<T> for std::result::Result<T, E> {
    fn q(self) -> Result<T> {
        self.map_err(|e| anyhow::Error::new(e.into()))
    }
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        keys_per_session: a.keys,
        ..SynthSpec::new(a.users, a.sessions, a.theta, a.seed)
    };
    let corpus = synthesize(&spec).q()?;
    write_corpus(&a.out, &corpus).q()?;
    let mut run = Run::new(&a.out, "synth")?;
    for f in ["manifest.toml", "keystroke.csv", "imu.csv"] {
        run.record(f)?;
    }
    run.finish(a.seed, &spec)
}

#[derive(Serialize)]
struct ExtractRecord<'a> {
    corpus: String,
    extract: &'a ExtractConfig,
    split: SplitSpec,
}

fn split_spec(text: Option<&str>, users: usize, seed: u64) -> Result<SplitSpec> {
    let (train, test, validation) = match text {
        Some(t) => {
            let parts: Vec<usize> = t
                .split(',')
                .map(|p| p.trim().parse().with_context(|| format!("bad split count {p:?}")))
                .collect::<Result<_>>()?;
            let [a, b, c] = parts[..] else {
                bail!("--split takes three counts: train,test,validation");
            };
            (a, b, c)
        }
        None => {
            let test = users / 5;
            let validation = users / 5;
            (users - test - validation, test, validation)
        }
    };
    Ok(SplitSpec {
        seed,
        train,
        test,
        validation,
    })
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let manifest_path = a.manifest.clone().unwrap_or_else(|| a.corpus.join("manifest.toml"));
    let text = std::fs::read_to_string(&manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest = Manifest::from_toml(&text).q()?;
    let mut keystroke: SchemaKind = a.schema.parse().q()?;
    if keystroke == SchemaKind::Imu {
        bail!("--schema selects the keystroke layout: full or humidb");
    }
    if manifest.keystroke_schema() == SchemaKind::HumidbKeystroke && keystroke != SchemaKind::HumidbKeystroke {
        eprintln!("extract: {} has no release times, using the humidb keystroke schema", manifest.name);
        keystroke = SchemaKind::HumidbKeystroke;
    }
    let sensors = parse_modalities(&a.modalities).q()?;
    if let Some(s) = sensors.iter().find(|s| !manifest.sensors.contains(s)) {
        bail!("modality {s} is not provided by corpus {}", manifest.name);
    }
    // Only load the sensors that were asked for.
    let manifest = Manifest {
        sensors: sensors.clone(),
        imu_file: if sensors.is_empty() { None } else { manifest.imu_file.clone() },
        ..manifest
    };
    let corpus = ingest(&a.corpus, &manifest).q()?;
    let cfg = ExtractConfig {
        keystroke,
        window: a.window,
        sensors,
    };
    let samples = extract_corpus(&corpus, &cfg).q()?;
    let users = corpus.users();
    let spec = split_spec(a.split.as_deref(), users.len(), a.seed)?;
    let splits = split_users(&users, &spec).q()?;

    let mut run = Run::new(&a.out, "extract")?;
    let store = FeatureStore {
        extract: cfg.clone(),
        samples,
    };
    save_feature_store(&store, &run.path(FEATURES)).q()?;
    run.record(FEATURES)?;
    let mut buf = Vec::new();
    write_split_manifest(&splits, &mut buf).q()?;
    run.write(SPLITS, &buf)?;
    let mut dropped = String::from("user,session,reason\n");
    for d in &corpus.dropped {
        dropped.push_str(&format!(
            "{},{},{}\n",
            d.user,
            d.session.as_deref().unwrap_or(""),
            d.reason.replace(',', ";")
        ));
    }
    run.write("dropped.csv", dropped.as_bytes())?;
    eprintln!(
        "extract: {} samples from {} sessions; dropped {} sessions and {} users",
        store.samples.len(),
        corpus.sessions.len(),
        corpus.dropped.len() - corpus.dropped_users(),
        corpus.dropped_users()
    );
    run.finish(
        a.seed,
        &ExtractRecord {
            corpus: a.corpus.display().to_string(),
            extract: &cfg,
            split: spec,
        },
    )
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct FileConfig {
    train: Option<TrainConfig>,
    model: Option<ModelOverrides>,
}

#[derive(Serialize)]
struct TrainRecord {
    train: TrainConfig,
    model: ModelOverrides,
}

fn resolve(flags: &TrainFlags) -> Result<TrainRecord> {
    let file: FileConfig = match &flags.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => FileConfig::default(),
    };
    let mut train = file.train.unwrap_or_default();
    let mut model = match (file.model, flags.mini) {
        (_, true) => ModelOverrides::miniature(),
        (Some(m), false) => m,
        (None, false) => ModelOverrides::default(),
    };
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(train.epochs, flags.epochs);
    set!(train.seed, flags.seed);
    set!(train.learning_rate, flags.lr);
    set!(train.patience, flags.patience);
    set!(train.users_per_batch, flags.batch_users);
    set!(train.batches_per_epoch, flags.batches_per_epoch);
    set!(train.enroll, flags.enroll);
    if flags.blocks.is_some() {
        model.blocks = flags.blocks;
    }
    if flags.hidden.is_some() {
        model.hidden = flags.hidden;
    }
    train.validate().q()?;
    Ok(TrainRecord { train, model })
}

fn load_store(dir: &Path) -> Result<(FeatureStore, Splits)> {
    let store = load_feature_store(&dir.join(FEATURES)).q()?;
    let file = std::fs::File::open(dir.join(SPLITS)).with_context(|| format!("reading {}", dir.join(SPLITS).display()))?;
    let splits = read_split_manifest(file).q()?;
    Ok((store, splits))
}

fn write_training(mut run: Run, ckpt: &Checkpoint, result: &TrainResult, record: &TrainRecord) -> Result<()> {
    save_checkpoint(ckpt, &run.path(CHECKPOINT)).q()?;
    run.record(CHECKPOINT)?;
    let mut buf = Vec::new();
    write_history_csv(&result.history, &mut buf).q()?;
    run.write("history.csv", &buf)?;
    eprintln!(
        "{} epochs; best validation EER {:.4} at epoch {} (initial {:.4})",
        result.history.len(),
        result.best_val_eer,
        result.best_epoch,
        result.initial_val_eer
    );
    run.finish(record.train.seed, record)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let record = resolve(&a.flags)?;
    let (store, splits) = load_store(&a.features)?;
    let data = prepare(&store.samples, &splits, &store.extract).q()?;
    let model = BehaveFormer::new(model_config(&store.extract, &record.model), record.train.seed).q()?;
    let result = training::train(model, &data.train, &data.validation, &record.train).q()?;
    let ckpt = Checkpoint {
        model: result.model.clone(),
        extract: store.extract.clone(),
        normalizers: data.normalizers,
        seed: record.train.seed,
        config_digest: config_digest(&record),
    };
    write_training(Run::new(&a.out, "train")?, &ckpt, &result, &record)
}

pub fn finetune(a: FinetuneArgs) -> Result<()> {
    let record = resolve(&a.flags)?;
    let pre = load_checkpoint(&a.checkpoint).q()?;
    let (store, splits) = load_store(&a.features)?;
    let data = prepare(&store.samples, &splits, &store.extract).q()?;
    let result = training::fine_tune(&pre.model, &data.train, &data.validation, &record.train, &a.freeze).q()?;
    let ckpt = Checkpoint {
        model: result.model.clone(),
        extract: store.extract.clone(),
        normalizers: data.normalizers,
        seed: record.train.seed,
        config_digest: config_digest(&record),
    };
    write_training(Run::new(&a.out, "finetune")?, &ckpt, &result, &record)
}

fn split_samples(store: &FeatureStore, splits: &Splits, which: &str) -> Result<Vec<Sample>> {
    if which == "all" {
        return Ok(store.samples.clone());
    }
    let split: Split = which.parse().q()?;
    Ok(select(&store.samples, splits.users(split)))
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    checkpoint_digest: &'a str,
    features: String,
    split: &'a str,
    enroll: usize,
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint).q()?;
    let (store, splits) = load_store(&a.features)?;
    let samples = split_samples(&store, &splits, &a.split)?;
    let data = to_labeled(&samples, &ckpt.normalizers).q()?;
    let ev = pipeline::evaluate(&ckpt.model, &data, a.enroll).q()?;

    let mut run = Run::new(&a.out, "evaluate")?;
    run.write("metrics.json", (ev.report.to_json() + "\n").as_bytes())?;
    let mut scores = String::from("claimed,source,session,t,score,genuine\n");
    for r in &ev.scores.records {
        scores.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.claimed,
            r.source,
            r.session,
            r.t,
            r.score,
            u8::from(r.genuine)
        ));
    }
    run.write("scores.csv", scores.as_bytes())?;
    write_det(&mut run, &ev.det)?;
    eprintln!("EER {:.4}, silhouette {:.4}", ev.report.eer, ev.report.silhouette);
    run.finish(
        ckpt.seed,
        &EvalRecord {
            checkpoint_digest: &ckpt.config_digest,
            features: a.features.display().to_string(),
            split: &a.split,
            enroll: a.enroll,
        },
    )
}

fn write_det(run: &mut Run, det: &behaveformer::evaluation::DetCurve) -> Result<()> {
    let mut csv = Vec::new();
    write_det_csv(det, &mut csv).q()?;
    run.write("det.csv", &csv)?;
    let mut svg = Vec::new();
    write_det_svg(det, &mut svg).q()?;
    run.write("det.svg", &svg)
}

#[derive(Serialize)]
struct DetRecord {
    scores: String,
}

pub fn det(a: DetArgs) -> Result<()> {
    let mut reader = csv::Reader::from_path(&a.scores).with_context(|| format!("reading {}", a.scores.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("scores file lacks a {name} column"))
    };
    let (si, gi) = (col("score")?, col("genuine")?);
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let score: f64 = rec[si].parse().with_context(|| format!("line {line}: bad score"))?;
        match &rec[gi] {
            "1" | "true" => genuine.push(score),
            "0" | "false" => impostor.push(score),
            other => bail!("line {line}: genuine must be 0/1, got {other:?}"),
        }
    }
    let curve = compute_det(&genuine, &impostor).q()?;
    let mut run = Run::new(&a.out, "det")?;
    write_det(&mut run, &curve)?;
    let summary = serde_json::json!({ "eer": curve.eer, "threshold": curve.eer_threshold });
    run.write("eer.json", (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    eprintln!("EER {:.4}", curve.eer);
    run.finish(
        0,
        &DetRecord {
            scores: a.scores.display().to_string(),
        },
    )
}

pub fn embed(a: EmbedArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint).q()?;
    let (store, splits) = load_store(&a.features)?;
    let samples = split_samples(&store, &splits, &a.split)?;
    let data = to_labeled(&samples, &ckpt.normalizers).q()?;
    let embeddings = ckpt.model.embed(&data.inputs).q()?;
    let mut buf = Vec::new();
    write_embeddings_csv(&samples, &embeddings, &mut buf).q()?;
    let mut run = Run::new(&a.out, "embed")?;
    run.write("embeddings.csv", &buf)?;
    run.finish(
        ckpt.seed,
        &EvalRecord {
            checkpoint_digest: &ckpt.config_digest,
            features: a.features.display().to_string(),
            split: &a.split,
            enroll: 0,
        },
    )
}
