//! The `sine` command driven in-process through `run_command`.

use std::path::{Path, PathBuf};

use sine_core::cli::{run_command, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};
use sine_core::manifest::{sha256_file, RunManifest};

const SMALL: [&str; 6] = ["--set", "synth.n_users=150", "--set", "synth.n_items=200", "--set", "model.dim=8"];

fn sine(args: &[&str]) -> i32 {
    let mut argv = vec!["sine"];
    argv.extend_from_slice(args);
    argv.extend_from_slice(&SMALL);
    run_command(&argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesises and prepares a small world; returns (log, dataset).
fn world(dir: &Path) -> (PathBuf, PathBuf) {
    assert_eq!(sine(&["synth", "--out", s(&dir.join("world"))]), EXIT_OK);
    let log = dir.join("world/interactions.csv");
    assert_eq!(sine(&["prepare", "--input", s(&log), "--out", s(&dir.join("data"))]), EXIT_OK);
    (log, dir.join("data/dataset.tsv"))
}

#[test]
fn usage_errors() {
    assert_eq!(run_command(&["sine", "--help"]), EXIT_OK);
    assert_eq!(run_command(&["sine", "frobnicate"]), EXIT_USAGE);
    assert_eq!(run_command(&["sine", "train", "--dataset", "x"]), EXIT_USAGE);
    assert_eq!(run_command(&["sine", "evaluate", "--split", "sideways"]), EXIT_USAGE);
}

#[test]
fn config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w");
    let out = s(&out);
    assert_eq!(sine(&["synth", "--out", out, "--set", "train.lambda3=0.5"]), EXIT_CONFIG);
    assert_eq!(sine(&["synth", "--out", out, "--set", "model.nonsense=1"]), EXIT_CONFIG);
    assert_eq!(sine(&["synth", "--out", out, "--set", "no-equals-sign"]), EXIT_CONFIG);

    let toml = dir.path().join("bad.toml");
    std::fs::write(&toml, "[model]\ndim = 8\nwidth = 3\n").unwrap();
    assert_eq!(run_command(&["sine", "--config", s(&toml), "synth", "--out", out]), EXIT_CONFIG);
    assert_eq!(run_command(&["sine", "--config", s(&dir.path().join("missing.toml")), "synth", "--out", out]), EXIT_CONFIG);
}

#[test]
fn runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(sine(&["prepare", "--input", s(&missing), "--out", s(&dir.path().join("d"))]), EXIT_RUNTIME);
}

#[test]
fn config_file_values_apply_and_flags_override_them() {
    let dir = tempfile::tempdir().unwrap();
    let toml = dir.path().join("run.toml");
    std::fs::write(&toml, "[synth]\nn_users = 40\nn_items = 90\nseed = 3\n").unwrap();
    let out = dir.path().join("w");
    let code = run_command(&["sine", "--config", s(&toml), "--set", "synth.seed=4", "synth", "--out", s(&out)]);
    assert_eq!(code, EXIT_OK);
    let m = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(m.config.synth.n_users, 40);
    assert_eq!(m.config.synth.seed, 4);
    assert_eq!(m.seeds["synth.seed"], 4);
}

#[test]
fn train_evaluate_and_analyze_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (log, dataset) = world(dir.path());
    let run = dir.path().join("run");
    assert_eq!(
        sine(&["train", "--dataset", s(&dataset), "--out", s(&run), "--epochs", "2", "--k", "2"]),
        EXIT_OK
    );
    let m = RunManifest::read(&run.join("manifest.json")).unwrap();
    assert_eq!(m.command, "train");
    assert_eq!(m.config.model.n_interests, 2);
    assert_eq!(m.inputs.len(), 1);
    assert_eq!(m.inputs[0].sha256, sha256_file(&dataset).unwrap());
    assert!(m.stale_inputs().unwrap().is_empty());
    for f in &m.outputs {
        assert!(run.join(f).is_file(), "{}", f.display());
    }
    let log_text = std::fs::read_to_string(run.join("train_log.tsv")).unwrap();
    assert_eq!(log_text.lines().count(), 3);

    let eval = dir.path().join("eval");
    let ckpt = run.join("checkpoint.json");
    assert_eq!(
        sine(&["evaluate", "--checkpoint", s(&ckpt), "--dataset", s(&dataset), "--out", s(&eval), "--per-user"]),
        EXIT_OK
    );
    let report = std::fs::read_to_string(eval.join("eval_report.tsv")).unwrap();
    assert!(report.starts_with("# sine eval report v1"));
    // same checkpoint, same split: identical summary to the training run's test report
    let test = std::fs::read_to_string(run.join("test_report.tsv")).unwrap();
    assert!(report.starts_with(&test));

    let an = dir.path().join("analysis");
    assert_eq!(sine(&["analyze", "--input", s(&log), "--out", s(&an), "--nearest"]), EXIT_OK);
    let hist = std::fs::read_to_string(an.join("histograms.tsv")).unwrap();
    assert!(hist.lines().count() > 1);
    assert_eq!(sine(&["analyze", "--input", s(&log), "--out", s(&an), "--window", "0"]), EXIT_CONFIG);
}

#[test]
fn evaluate_rejects_a_foreign_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let (_, dataset) = world(dir.path());
    let run = dir.path().join("run");
    assert_eq!(sine(&["train", "--dataset", s(&dataset), "--out", s(&run), "--epochs", "0"]), EXIT_OK);

    let other = dir.path().join("other");
    std::fs::create_dir(&other).unwrap();
    let world = other.join("world");
    let code = run_command(&["sine", "synth", "--out", s(&world), "--set", "synth.n_users=150", "--set", "synth.n_items=120"]);
    assert_eq!(code, EXIT_OK);
    let log = other.join("world/interactions.csv");
    assert_eq!(sine(&["prepare", "--input", s(&log), "--out", s(&other.join("data"))]), EXIT_OK);
    let code = sine(&[
        "evaluate",
        "--checkpoint",
        s(&run.join("checkpoint.json")),
        "--dataset",
        s(&other.join("data/dataset.tsv")),
        "--out",
        s(&other.join("eval")),
    ]);
    assert_eq!(code, EXIT_RUNTIME);
}

#[test]
fn sweep_runs_every_value() {
    let dir = tempfile::tempdir().unwrap();
    let (_, dataset) = world(dir.path());
    let out = dir.path().join("sweep");
    let code = sine(&[
        "sweep", "--dataset", s(&dataset), "--out", s(&out), "--param", "K", "--values", "1..2", "--epochs", "1",
        "--workers", "2",
    ]);
    assert_eq!(code, EXIT_OK);
    let summary = std::fs::read_to_string(out.join("summary.tsv")).unwrap();
    assert_eq!(summary.lines().count(), 3, "{summary}");
    for k in ["K=1", "K=2"] {
        let m = RunManifest::read(&out.join(k).join("manifest.json")).unwrap();
        assert_eq!(m.config.model.n_interests, k[2..].parse::<usize>().unwrap());
    }
    let code = sine(&[
        "sweep", "--dataset", s(&dataset), "--out", s(&out), "--param", "lambda", "--values", "0.5:0.5",
    ]);
    assert_eq!(code, EXIT_CONFIG);
}
