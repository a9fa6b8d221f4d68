//! Command-line behaviour: exit codes, pipeline staging, and output
//! contracts.

use std::path::{Path, PathBuf};
use std::process::Output;

use readability_core::corpus;
use readability_core::synthetic::{self, SyntheticSpec};

fn run_cli(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_readability"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn tiny_corpus(dir: &Path, seed: u64) -> PathBuf {
    let docs = synthetic::generate(&SyntheticSpec::three_grades(6, seed));
    let path = dir.join("corpus.jsonl");
    corpus::write_jsonl(&path, &docs).unwrap();
    path
}

fn tiny_config(dir: &Path, corpus_path: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        format!(
            r#"seed = 3

[paths]
corpus = "{}"

[corpus]
n_max = 8
m_max = 8

[encoder]
d_embed = 8
d_hidden = 4
kernels = 8
heads = 2
n_layers = 1

[train]
epochs = 2
batch_size = 8

[dsdr]
d_embed = 8
d_hidden = 4
d_ff = 16
eptm_epochs = 2
epochs = 2

[ranking]
epochs = 3

[ordinal]
epochs = 3
"#,
            corpus_path.display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn missing_corpus_path_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&[
        "train-hhnn",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn nonexistent_corpus_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(&config, "[paths]\ncorpus = \"/no/such/file.jsonl\"\n").unwrap();
    let out = run_cli(&[
        "split-corpus",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(&config, "[train]\nwhatever = 1\n").unwrap();
    let out = run_cli(&["train-hhnn", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
}

#[test]
fn malformed_corpus_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("bad.jsonl");
    std::fs::write(&corpus_path, "{\"id\": \"a\", \"grade\": \"not a number\"}\n").unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(
        &config,
        format!("[paths]\ncorpus = \"{}\"\n", corpus_path.display()),
    )
    .unwrap();
    let out = run_cli(&[
        "split-corpus",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 3);
}

#[test]
fn train_dsdrrm_refuses_to_run_without_sentence_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = tiny_corpus(dir.path(), 1);
    let config = tiny_config(dir.path(), &corpus_path);
    let out_dir = dir.path().join("out");
    // no train-hhnn ran, so <out>/sentences.jsonl is absent
    let out = run_cli(&[
        "train-dsdrrm",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("sentence corpus"),
        "unexpected message: {stderr}"
    );
}

#[test]
fn train_dsdrrm_accepts_explicit_sentence_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = tiny_corpus(dir.path(), 2);
    let config = tiny_config(dir.path(), &corpus_path);
    let hhnn_out = dir.path().join("stage1");
    let out = run_cli(&[
        "train-hhnn",
        "--config",
        config.to_str().unwrap(),
        "--out",
        hhnn_out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // separate out dir: the default staging location is empty, the explicit
    // flag points at stage1's corpus
    let dsdr_out = dir.path().join("stage2");
    let sentences = hhnn_out.join("sentences.jsonl");
    let out = run_cli(&[
        "train-dsdrrm",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dsdr_out.to_str().unwrap(),
        "--sentence-corpus",
        sentences.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dsdr_out.join("dsdr.json").exists());
    assert!(dsdr_out.join("ranking.json").exists());
    assert!(dsdr_out.join("ordinal.json").exists());
}

#[test]
fn evaluate_heads_share_report_schema() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = tiny_corpus(dir.path(), 4);
    let config = tiny_config(dir.path(), &corpus_path);
    let out_dir = dir.path().join("out");
    for cmd in [["train-hhnn"].as_slice(), &["train-dsdrrm"]] {
        let mut args = cmd.to_vec();
        let config_s = config.to_str().unwrap();
        let out_s = out_dir.to_str().unwrap();
        args.extend_from_slice(&["--config", config_s, "--out", out_s]);
        let out = run_cli(&args);
        assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut reports = Vec::new();
    for head in ["cls", "ordinal", "ranking"] {
        let out = run_cli(&[
            "evaluate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--head",
            head,
        ]);
        assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let raw = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
        let json: serde_json::Value = serde_json::from_str(&raw).unwrap();
        let keys: Vec<&str> = vec![
            "acc",
            "adj_acc",
            "f1_weighted",
            "precision_weighted",
            "recall_weighted",
            "qwk",
            "confusion",
            "head",
        ];
        for k in keys {
            assert!(json.get(k).is_some(), "{head} report missing {k}");
        }
        reports.push(json["head"].as_str().unwrap().to_string());
    }
    assert_eq!(reports, vec!["cls", "ordinal", "ranking"]);
    // the ranking run also dumps votes
    let preds = std::fs::read_to_string(out_dir.join("predictions.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(preds.lines().next().unwrap()).unwrap();
    assert!(first.get("votes").is_some());
}

#[test]
fn evaluate_multi_seed_reports_means() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = tiny_corpus(dir.path(), 5);
    let config = tiny_config(dir.path(), &corpus_path);
    let out_dir = dir.path().join("out");
    let out = run_cli(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--head",
        "cls",
        "--seeds",
        "1,2,3",
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let raw = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&raw).unwrap();
    assert_eq!(json["runs"].as_array().unwrap().len(), 3);
    assert_eq!(json["seeds"], serde_json::json!([1, 2, 3]));
    for key in ["acc", "adj_acc", "f1_weighted", "precision_weighted", "recall_weighted", "qwk"] {
        assert!(json["mean"].get(key).is_some(), "mean missing {key}");
    }
    // per-seed artifacts live in their own directories
    assert!(out_dir.join("seed-1").join("report.json").exists());
    assert!(out_dir.join("seed-3").join("checkpoint.json").exists());
}

#[test]
fn extract_features_consumes_resources() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("corpus.jsonl");
    corpus::write_jsonl(
        &corpus_path,
        &[
            corpus::RawDocument::from_text("a", 1, "你好。但是再见。"),
            corpus::RawDocument::from_text("b", 2, "再见但是。"),
        ],
    )
    .unwrap();
    let res_dir = dir.path().join("resources");
    std::fs::create_dir_all(&res_dir).unwrap();
    std::fs::write(res_dir.join("connectives_negative.txt"), "但是\n").unwrap();
    std::fs::write(res_dir.join("strokes.tsv"), "你\t7\n好\t6\n").unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(
        &config,
        format!(
            "[paths]\ncorpus = \"{}\"\nresources = \"{}\"\n",
            corpus_path.display(),
            res_dir.display()
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("o");
    let out = run_cli(&[
        "extract-features",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("features.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[0], "id");
    assert_eq!(header[1], "grade");
    let neg_idx = header.iter().position(|h| *h == "negative_connective_count").unwrap();
    let row_a: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row_a[0], "a");
    assert_eq!(row_a[neg_idx], "1");
    // POS features stay null (empty cells) without tags
    let noun_idx = header.iter().position(|h| *h == "noun_pct").unwrap();
    assert_eq!(row_a[noun_idx], "");
}

#[test]
fn preset_flag_is_accepted_and_unknown_preset_rejected() {
    let out = run_cli(&["train-hhnn", "--preset", "nonsense"]);
    assert_eq!(exit_code(&out), 2);
    // a valid preset still fails on the missing corpus, not on the preset
    let out = run_cli(&["train-hhnn", "--preset", "cmer"]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus"));
}

#[test]
fn label_sentences_requires_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = tiny_corpus(dir.path(), 6);
    let config = tiny_config(dir.path(), &corpus_path);
    let out = run_cli(&[
        "label-sentences",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("empty").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn label_sentences_matches_training_output() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = tiny_corpus(dir.path(), 7);
    let config = tiny_config(dir.path(), &corpus_path);
    let out_dir = dir.path().join("out");
    let out = run_cli(&[
        "train-hhnn",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let from_training = std::fs::read(out_dir.join("sentences.jsonl")).unwrap();
    let out = run_cli(&[
        "label-sentences",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let relabeled = std::fs::read(out_dir.join("sentences.jsonl")).unwrap();
    assert_eq!(from_training, relabeled);
}
