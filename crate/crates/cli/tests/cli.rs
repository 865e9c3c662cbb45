use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_behaveformer"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn help_succeeds() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["synth", "extract", "train", "finetune", "evaluate", "det", "embed"] {
        assert!(text.contains(cmd), "help lists {cmd}");
    }
}

#[test]
fn unknown_subcommand_fails() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn missing_checkpoint_reports_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .current_dir(dir.path())
        .args(["evaluate", "--checkpoint", "nope.bhvf", "--features", "nope"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn unavailable_modality_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run(d, &["synth", "--users", "4", "--sessions", "2", "--keys", "40", "--out", "c"]);
    std::fs::write(d.join("c/manifest.toml"), "name = \"typing\"\nkeystroke_file = \"keystroke.csv\"\n").unwrap();
    let out = bin()
        .current_dir(d)
        .args(["extract", "--corpus", "c", "--modalities", "K+A", "--out", "f"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn synthetic_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run(d, &["synth", "--users", "8", "--sessions", "4", "--keys", "60", "--out", "c"]);
    run(
        d,
        &[
            "extract",
            "--corpus",
            "c",
            "--modalities",
            "K",
            "--window",
            "20",
            "--split",
            "4,2,2",
            "--out",
            "f",
        ],
    );
    assert!(d.join("f/features.jsonl").is_file());
    assert!(d.join("f/splits.csv").is_file());
    run(
        d,
        &["train", "--features", "f", "--epochs", "5", "--mini", "--enroll", "3", "--out", "r"],
    );
    let history = std::fs::read_to_string(d.join("r/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 6, "header and five epochs");
    run(
        d,
        &[
            "evaluate",
            "--checkpoint",
            "r/checkpoint.bhvf",
            "--features",
            "f",
            "--enroll",
            "3",
            "--out",
            "e",
        ],
    );
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("e/metrics.json")).unwrap()).unwrap();
    for key in ["eer", "usability", "tcr_s", "frwi_min", "fawi_min"] {
        assert!(metrics[key].is_number(), "{key} present");
    }
    let eer = metrics["eer"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&eer));

    run(d, &["det", "--scores", "e/scores.csv", "--out", "d"]);
    let det: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("d/eer.json")).unwrap()).unwrap();
    assert_eq!(det["eer"].as_f64().unwrap(), eer);

    run(d, &["embed", "--checkpoint", "r/checkpoint.bhvf", "--features", "f", "--out", "m"]);
    let emb = std::fs::read_to_string(d.join("m/embeddings.csv")).unwrap();
    assert_eq!(emb.lines().next().unwrap().split(',').count(), 4 + 64);

    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("e/run.json")).unwrap()).unwrap();
    assert!(manifest["config_digest"].is_string());
}

#[test]
fn finetune_with_frozen_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run(d, &["synth", "--users", "8", "--sessions", "3", "--keys", "60", "--out", "c"]);
    run(d, &["extract", "--corpus", "c", "--window", "20", "--split", "4,2,2", "--out", "f"]);
    run(
        d,
        &["train", "--features", "f", "--epochs", "1", "--mini", "--enroll", "2", "--out", "r"],
    );
    run(
        d,
        &[
            "finetune",
            "--checkpoint",
            "r/checkpoint.bhvf",
            "--features",
            "f",
            "--freeze",
            "keystroke.gre",
            "--epochs",
            "1",
            "--enroll",
            "2",
            "--out",
            "t",
        ],
    );
    assert!(d.join("t/checkpoint.bhvf").is_file());
    let out = bin()
        .current_dir(d)
        .args([
            "finetune",
            "--checkpoint",
            "r/checkpoint.bhvf",
            "--features",
            "f",
            "--freeze",
            "no.such.layer",
            "--epochs",
            "1",
            "--out",
            "u",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
