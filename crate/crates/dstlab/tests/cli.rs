use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use dstlab::corpus::synth::builtin_schema;
use dstlab::corpus::{ingest_multiwoz, Split};
use dstlab::dst_model::{write_predictions, PredictionRecord, StatusMode};
use dstlab::training::MlmMode;
use dstlab_cli::spec::{ExperimentSpec, Preset};
use dstlab_cli::util::sha256_hex;

fn dstlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dstlab"))
        .args(args)
        .env_remove("DSTLAB_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const SMALL_SYNTH: &str = r#"{"num_dialogues": 30, "min_user_turns": 1, "max_user_turns": 3,
    "domain_switch_prob": 0.3, "chitchat_prob": 0.2}"#;

fn generate(dir: &Path, seed: &str) {
    let cfg = dir.join("synth.json");
    write(&cfg, SMALL_SYNTH);
    ok(dstlab(&["generate", "--config", p(&cfg), "--seed", seed, "--out", p(&dir.join("data"))]));
}

#[test]
fn generate_is_deterministic_and_manifested() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(a.path(), "4");
    generate(b.path(), "4");
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("data/manifest.json")).unwrap()).unwrap();
    let mut ids = std::collections::HashSet::new();
    let mut total = 0;
    for name in ["schema.json", "train.json", "dev.json", "test.json"] {
        let bytes = std::fs::read(a.path().join("data").join(name)).unwrap();
        assert_eq!(bytes, std::fs::read(b.path().join("data").join(name)).unwrap(), "{name}");
        assert_eq!(manifest["files"][name]["sha256"], sha256_hex(&bytes).as_str(), "{name}");
        if name != "schema.json" {
            let dialogues: Value = serde_json::from_slice(&bytes).unwrap();
            for d in dialogues.as_array().unwrap() {
                assert!(ids.insert(d["id"].as_str().unwrap().to_string()), "split ids overlap");
            }
            total += dialogues.as_array().unwrap().len();
        }
    }
    assert_eq!(total, 30);
    assert_eq!(manifest["files"]["train.json"]["dialogues"], 24);
    assert_eq!(manifest["files"]["dev.json"]["dialogues"], 3);
}

#[test]
fn zero_probability_perturbation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "1");
    let input = dir.path().join("data/train.json");
    let out = dir.path().join("perturbed.json");
    let stdout = ok(dstlab(&[
        "perturb",
        "--in",
        p(&input),
        "--out",
        p(&out),
        "--probability",
        "0",
        "--source",
        "target",
    ]));
    assert!(stdout.starts_with("perturbed 0 of 24"), "{stdout}");
    assert_eq!(std::fs::read(&input).unwrap(), std::fs::read(&out).unwrap());
    assert!(dir.path().join("perturbed.json.manifest.json").exists());
}

#[test]
fn perturbation_sets_inserted_flags() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "1");
    let cfg = dir.path().join("pert.json");
    write(
        &cfg,
        r#"{"probability": 1.0, "num_insertions": 3, "source": "random_words", "position_policy": "random_boundary"}"#,
    );
    let out = dir.path().join("perturbed.json");
    ok(dstlab(&[
        "perturb",
        "--in",
        p(&dir.path().join("data/train.json")),
        "--out",
        p(&out),
        "--config",
        p(&cfg),
        "--seed",
        "9",
    ]));
    let corpus = ingest_multiwoz(&out, std::sync::Arc::new(builtin_schema()), Split::Train).unwrap();
    for d in &corpus.dialogues {
        assert_eq!(d.turns.iter().filter(|t| t.inserted).count(), 3);
    }
}

#[test]
fn missing_auxiliary_pool_is_a_diagnosed_failure() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "1");
    let out = dstlab(&[
        "perturb",
        "--in",
        p(&dir.path().join("data/train.json")),
        "--out",
        p(&dir.path().join("x.json")),
        "--source",
        "auxiliary",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("auxiliary pool"));
}

fn gold_predictions(dir: &Path) -> std::path::PathBuf {
    let corpus = ingest_multiwoz(dir.join("data/test.json"), std::sync::Arc::new(builtin_schema()), Split::Test).unwrap();
    let records: Vec<PredictionRecord> = corpus
        .dialogues
        .iter()
        .flat_map(|d| {
            d.gold_turns().map(move |t| PredictionRecord {
                dialogue_id: d.id.clone(),
                turn: t,
                state: d.turns[t].gold_state.clone().unwrap(),
                detail: None,
            })
        })
        .collect();
    let path = dir.join("gold.jsonl");
    write_predictions(&path, &records).unwrap();
    path
}

#[test]
fn eval_of_perfect_predictions_and_compare_of_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "2");
    let preds = gold_predictions(dir.path());
    let report = dir.path().join("report.json");
    let stdout = ok(dstlab(&[
        "eval",
        "--predictions",
        p(&preds),
        "--corpus",
        p(&dir.path().join("data/test.json")),
        "--out",
        p(&report),
    ]));
    assert!(stdout.lines().any(|l| l == "jga_all=1.0"), "{stdout}");

    let csv = dir.path().join("gains.csv");
    let stdout = ok(dstlab(&["compare", "--before", p(&report), "--after", p(&report), "--csv", p(&csv)]));
    assert_eq!(stdout.matches("+0.00%").count(), 3, "{stdout}");
    let csv = std::fs::read_to_string(csv).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",0")), "{csv}");
}

#[test]
fn eval_names_missing_predictions() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "2");
    let empty = dir.path().join("empty.jsonl");
    write(&empty, "");
    let out = dstlab(&["eval", "--predictions", p(&empty), "--corpus", p(&dir.path().join("data/test.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing predictions for"), "{}", String::from_utf8_lossy(&out.stderr));
}

fn tiny_spec(dir: &Path) -> std::path::PathBuf {
    let spec = serde_json::json!({
        "name": "tiny",
        "corpus": {"kind": "synthetic", "config": serde_json::from_str::<Value>(SMALL_SYNTH).unwrap()},
        "train": {
            "encoder": {"hidden_dim": 8, "num_layers": 1, "num_heads": 2, "max_sequence_length": 96},
            "steps": 2, "batch_size": 2, "warmup_steps": 1
        },
        "output_dir": dir.join("runs"),
    });
    let path = dir.join("spec.json");
    write(&path, &spec.to_string());
    path
}

#[test]
fn train_writes_a_reproducible_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_spec(dir.path());
    let run = |extra: &[&str]| {
        let mut args = vec!["train", "--config", p(&spec)];
        args.extend_from_slice(extra);
        ok(dstlab(&args))
    };
    let first = run(&["--seed", "1"]);
    assert!(first.contains("jga_all="), "{first}");
    run(&["--seed", "2"]);
    run(&["--seed", "1"]);
    let runs = dir.path().join("runs");
    for name in ["tiny-seed1", "tiny-seed2", "tiny-seed1-1"] {
        let d = runs.join(name);
        for f in ["spec.json", "inputs.json", "metrics.jsonl", "predictions.jsonl", "oracle_predictions.jsonl", "report.json"] {
            assert!(d.join(f).exists(), "{name}/{f}");
        }
    }
    let frozen: Value = serde_json::from_str(&std::fs::read_to_string(runs.join("tiny-seed2/spec.json")).unwrap()).unwrap();
    assert_eq!(frozen["train"]["seed"], 2);
    let read = |n: &str| std::fs::read(runs.join(n).join("report.json")).unwrap();
    assert_eq!(read("tiny-seed1"), read("tiny-seed1-1"));
    assert_ne!(read("tiny-seed1"), read("tiny-seed2"));

    // --overwrite reuses the directory
    run(&["--seed", "2", "--overwrite"]);
    assert!(!runs.join("tiny-seed2-1").exists());
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_spec(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_dstlab"))
        .args(["train", "--config", p(&spec)])
        .env("DSTLAB_SEED", "77")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    ok(out);
    assert!(dir.path().join("runs/tiny-seed77/report.json").exists());
}

#[test]
fn ladder_presets_have_the_ablation_shapes() {
    let base = ExperimentSpec::synthetic("x", Default::default(), Default::default());
    let b = Preset::Base.apply(&base);
    assert_eq!((b.train.status_mode, b.train.mlm_mode), (StatusMode::Flat, MlmMode::Off));
    assert!(b.aux.is_none() && b.train.perturbation.is_none());
    let h = Preset::Hier.apply(&base);
    assert_eq!((h.train.status_mode, h.train.mlm_mode), (StatusMode::Hierarchical, MlmMode::Off));
    assert_eq!(Preset::ContinuedMlm.apply(&base).train.mlm_mode, MlmMode::TargetOnly);
    let full = Preset::Insertion.apply(&base);
    assert_eq!(full.train.status_mode, StatusMode::Hierarchical);
    assert_eq!(full.train.mlm_mode, MlmMode::TargetPlusAuxiliary);
    assert!(full.aux.is_some());
    let pert = full.train.perturbation.unwrap();
    assert_eq!((pert.probability, pert.num_insertions), (0.2, 2));
}

#[test]
fn help_lists_every_subcommand() {
    let help = ok(dstlab(&["--help"]));
    for sub in ["generate", "perturb", "train", "eval", "compare", "sweep"] {
        assert!(help.contains(sub), "{help}");
    }
}
