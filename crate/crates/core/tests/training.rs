mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use behaveformer::features::SchemaKind;
use behaveformer::numerics::{uniform, Graph, Mode, Tensor};
use behaveformer::training::{fine_tune, train, triplet_loss_graph, TrainingError};

#[test]
fn zero_epochs_returns_initial_model() {
    let cfg = common::extract_config(false);
    let data = common::prepared(&common::corpus(8, 3, 5.0, 1), &cfg, (4, 2, 2), 0);
    let model = common::model(&cfg, 0);
    let r = train(model.clone(), &data.train, &data.validation, &common::train_config(0, 0)).unwrap();
    assert_eq!(r.model, model);
    assert!(r.history.is_empty());
    assert_eq!(r.best_epoch, 0);
    assert_eq!(r.best_val_eer, r.initial_val_eer);
}

#[test]
fn history_is_reproducible() {
    let cfg = common::extract_config(false);
    let data = common::prepared(&common::corpus(8, 3, 5.0, 2), &cfg, (4, 2, 2), 0);
    let run = || train(common::model(&cfg, 1), &data.train, &data.validation, &common::train_config(3, 4)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
}

#[test]
fn training_separates_synthetic_users() {
    let cfg = common::extract_config(false);
    let data = common::prepared(&common::corpus(24, 8, 5.0, 3), &cfg, (16, 0, 8), 0);
    let tc = behaveformer::training::TrainConfig {
        patience: 30,
        ..common::train_config(30, 6)
    };
    let r = train(common::model(&cfg, 2), &data.train, &data.validation, &tc).unwrap();
    let first = r.history[0].train_loss;
    let last = r.history.last().unwrap().train_loss;
    assert!(last < first, "train loss {first} -> {last}");
    assert!(r.best_val_eer < 0.10, "validation EER {}", r.best_val_eer);
}

#[test]
fn fine_tune_rejects_mismatched_schema() {
    let full = common::extract_config(false);
    let reduced = behaveformer::features::ExtractConfig {
        keystroke: SchemaKind::HumidbKeystroke,
        ..full.clone()
    };
    let data = common::prepared(&common::corpus(8, 3, 5.0, 4), &reduced, (4, 2, 2), 0);
    let pretrained = common::model(&full, 0);
    let err = fine_tune(&pretrained, &data.train, &data.validation, &common::train_config(1, 0), &[]).unwrap_err();
    match err {
        TrainingError::SchemaMismatch(msg) => assert!(msg.contains("10") && msg.contains("3"), "{msg}"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn fine_tune_freezes_prefixes() {
    let cfg = common::extract_config(false);
    let data = common::prepared(&common::corpus(8, 3, 5.0, 5), &cfg, (4, 2, 2), 0);
    let pretrained = common::model(&cfg, 3);

    let untouched = fine_tune(&pretrained, &data.train, &data.validation, &common::train_config(0, 0), &[]).unwrap();
    assert_eq!(untouched.model, pretrained);

    let tc = behaveformer::training::TrainConfig {
        patience: 5,
        ..common::train_config(2, 0)
    };
    let frozen = vec!["keystroke.gre".to_string(), "keystroke.block0.tmha".to_string()];
    let r = fine_tune(&pretrained, &data.train, &data.validation, &tc, &frozen).unwrap();
    let mut moved = false;
    for e in pretrained.params.entries() {
        let now = r.model.params.get(&e.name).unwrap();
        if frozen.iter().any(|f| e.name.starts_with(f.as_str())) {
            assert_eq!(now, &e.tensor, "{} changed", e.name);
        } else if e.trainable && now != &e.tensor {
            moved = true;
        }
    }
    assert!(moved || r.best_epoch == 0, "no trainable parameter moved");

    let err = fine_tune(&pretrained, &data.train, &data.validation, &tc, &["keystroke.nothing".into()]).unwrap_err();
    assert!(matches!(err, TrainingError::UnknownFreeze(_)));
}

#[test]
fn triplet_loss_is_rotation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (t, d) = (5, 4);
    let a = uniform(&mut rng, &[t, d], 1.0);
    let p = uniform(&mut rng, &[t, d], 1.0);
    let n = uniform(&mut rng, &[t, d], 1.0);
    // Householder reflection I - 2vvᵀ/|v|² is orthogonal.
    let v = uniform(&mut rng, &[d], 1.0);
    let vv: f64 = v.data().iter().map(|x| x * x).sum();
    let mut q = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            q[i * d + j] = f64::from(u8::from(i == j)) - 2.0 * v.data()[i] * v.data()[j] / vv;
        }
    }
    let q = Tensor::new(vec![d, d], q).unwrap();
    let loss = |rotate: bool| {
        let mut g = Graph::new(Mode::Eval, 0);
        let qv = g.input(q.clone()).unwrap();
        let mut vars = Vec::new();
        for x in [&a, &p, &n] {
            let xv = g.input(x.clone()).unwrap();
            vars.push(if rotate { g.matmul(xv, qv).unwrap() } else { xv });
        }
        let l = triplet_loss_graph(&mut g, vars[0], vars[1], vars[2], 1.0).unwrap();
        g.value(l).item()
    };
    assert!((loss(false) - loss(true)).abs() < 1e-12);
}
