use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_triplets, triplet_loss_graph, LabeledInputs, TrainConfig, TrainingError};
use crate::evaluation::{compute_det, run_protocol};
use crate::model::{BehaveFormer, ModelError, ModelInput};
use crate::numerics::{adam_step, AdamConfig, AdamState, Graph, Mode, NumericsError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_eer: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    /// Parameters with the lowest validation EER, the initial ones included.
    pub model: BehaveFormer,
    pub history: Vec<EpochRecord>,
    /// 0 when no epoch improved on the initial parameters.
    pub best_epoch: usize,
    pub best_val_eer: f64,
    pub initial_val_eer: f64,
}

/// Trains `model` with triplet loss from scratch.
pub fn train(model: BehaveFormer, train: &LabeledInputs, val: &LabeledInputs, cfg: &TrainConfig) -> Result<TrainResult, TrainingError> {
    run(model, train, val, cfg, &[])
}

/// Continues training a pretrained model on new data. Parameters whose
/// names start with any `freeze` prefix are left untouched.
pub fn fine_tune(
    pretrained: &BehaveFormer,
    train: &LabeledInputs,
    val: &LabeledInputs,
    cfg: &TrainConfig,
    freeze: &[String],
) -> Result<TrainResult, TrainingError> {
    for f in freeze {
        if !pretrained.params.entries().iter().any(|e| e.name.starts_with(f.as_str())) {
            return Err(TrainingError::UnknownFreeze(f.clone()));
        }
    }
    run(pretrained.clone(), train, val, cfg, freeze)
}

/// Global EER of the enrollment-verification protocol on `val`.
pub fn validation_eer(model: &BehaveFormer, val: &LabeledInputs, enroll: usize) -> Result<f64, TrainingError> {
    let emb = model.embed(&val.inputs)?;
    let scores = run_protocol(&emb, &val.users, &val.sessions, &val.times, enroll).map_err(|e| TrainingError::Validation(e.to_string()))?;
    let det = compute_det(&scores.genuine(), &scores.impostor()).map_err(|e| TrainingError::Validation(e.to_string()))?;
    Ok(det.eer)
}

fn check_inputs(model: &BehaveFormer, data: &LabeledInputs, split: &str) -> Result<(), TrainingError> {
    let n = data.len();
    if data.users.len() != n || data.sessions.len() != n || data.times.len() != n {
        return Err(TrainingError::SchemaMismatch(format!(
            "{split}: label columns differ in length from {n} inputs"
        )));
    }
    let ks = &model.config.keystroke;
    let want_k = [ks.seq_len, ks.channels];
    let want_i = model.config.imu.as_ref().map(|c| [c.seq_len, c.channels]);
    for (i, x) in data.inputs.iter().enumerate() {
        if x.keystroke.shape() != want_k {
            return Err(TrainingError::SchemaMismatch(format!(
                "{split} sample {i}: keystroke {:?}, model tower expects {want_k:?}",
                x.keystroke.shape()
            )));
        }
        match (&x.imu, want_i) {
            (None, None) => {}
            (Some(t), Some(w)) if t.shape() == w => {}
            (got, want) => {
                return Err(TrainingError::SchemaMismatch(format!(
                    "{split} sample {i}: imu {:?}, model tower expects {want:?}",
                    got.as_ref().map(|t| t.shape().to_vec())
                )))
            }
        }
    }
    Ok(())
}

fn diverged(epoch: usize) -> impl Fn(ModelError) -> TrainingError {
    move |e| match e {
        ModelError::Numerics(NumericsError::NonFinite { .. }) => TrainingError::Diverged { epoch },
        other => other.into(),
    }
}

fn run(
    mut model: BehaveFormer,
    train: &LabeledInputs,
    val: &LabeledInputs,
    cfg: &TrainConfig,
    freeze: &[String],
) -> Result<TrainResult, TrainingError> {
    cfg.validate()?;
    check_inputs(&model, train, "train")?;
    check_inputs(&model, val, "validation")?;
    let frozen = |name: &str| freeze.iter().any(|f| name.starts_with(f.as_str()));

    let initial_val_eer = validation_eer(&model, val, cfg.enroll)?;
    let mut best = (model.clone(), 0, initial_val_eer);
    let mut history = Vec::new();
    if cfg.epochs == 0 {
        return Ok(TrainResult {
            model,
            history,
            best_epoch: 0,
            best_val_eer: initial_val_eer,
            initial_val_eer,
        });
    }
    // Fail early rather than at the first batch.
    sample_triplets(
        &train.users,
        cfg.users_per_batch,
        cfg.seqs_per_user,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let batches = match cfg.batches_per_epoch {
        0 => (train.len() / (cfg.users_per_batch * cfg.seqs_per_user)).max(1),
        b => b,
    };
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        for _ in 0..batches {
            let triplets = sample_triplets(&train.users, cfg.users_per_batch, cfg.seqs_per_user, &mut rng)?;
            let t = triplets.len();
            let order: Vec<&ModelInput> = triplets
                .iter()
                .map(|x| &train.inputs[x.anchor])
                .chain(triplets.iter().map(|x| &train.inputs[x.positive]))
                .chain(triplets.iter().map(|x| &train.inputs[x.negative]))
                .collect();
            let mut g = Graph::new(Mode::Train, rng.random());
            let (xk, xi) = model.stack(&mut g, &order)?;
            let emb = model.forward(&mut g, xk, xi).map_err(diverged(epoch))?;
            let nd = |e: NumericsError| diverged(epoch)(e.into());
            let a = g.narrow(emb, 0, 0, t).map_err(nd)?;
            let p = g.narrow(emb, 0, t, t).map_err(nd)?;
            let n = g.narrow(emb, 0, 2 * t, t).map_err(nd)?;
            let loss = triplet_loss_graph(&mut g, a, p, n, cfg.margin).map_err(nd)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(TrainingError::Diverged { epoch });
            }
            loss_sum += value;
            let grads = g.backward(loss)?;
            adam_step(&mut model.params, &grads, &mut adam, frozen)?;
            let updates: Vec<_> = g.buffer_updates().iter().filter(|u| !frozen(&u.key)).cloned().collect();
            model.apply_buffer_updates(&updates)?;
        }
        let val_eer = validation_eer(&model, val, cfg.enroll)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_eer,
        });
        if val_eer < best.2 {
            best = (model.clone(), epoch, val_eer);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainResult {
        model: best.0,
        history,
        best_epoch: best.1,
        best_val_eer: best.2,
        initial_val_eer,
    })
}
