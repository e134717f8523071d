//! End-to-end runs of the capnet binary against a small synthetic dataset.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use capnet_core::data::{generate_synthetic, save_features, SyntheticSpec};

fn capnet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_capnet"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn capnet");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn capnet");
    assert!(
        !out.status.success(),
        "expected failure, got success\nstdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes the two-pattern synthetic dataset as COCO-style annotations plus a
/// feature CSV, and returns (annotations, features) paths.
fn write_dataset(dir: &Path) -> (PathBuf, PathBuf) {
    let spec = SyntheticSpec::two_pattern(20, 8, 42);
    let (table, annotations) = generate_synthetic(&spec);
    let features = dir.join("features.csv");
    save_features(&features, &table).unwrap();

    let images: Vec<String> = annotations
        .iter()
        .map(|(id, _)| format!("{{\"id\": {id}}}"))
        .collect();
    let anns: Vec<String> = annotations
        .iter()
        .map(|(id, cap)| format!("{{\"image_id\": {id}, \"caption\": \"{cap}\"}}"))
        .collect();
    let json = format!(
        "{{\"images\": [{}], \"annotations\": [{}]}}",
        images.join(", "),
        anns.join(", ")
    );
    let ann_path = dir.join("annotations.json");
    std::fs::write(&ann_path, json).unwrap();
    (ann_path, features)
}

fn build_vocab(dir: &Path, annotations: &Path) -> PathBuf {
    let vocab = dir.join("vocab.tsv");
    run_ok(
        capnet()
            .args(["build-vocab", "--min-count", "1"])
            .arg("--annotations")
            .arg(annotations)
            .arg("--out")
            .arg(&vocab),
    );
    vocab
}

/// Trains a tiny model to convergence; shared by the caption/evaluate tests.
fn train(dir: &Path, annotations: &Path, features: &Path, vocab: &Path, epochs: &str) -> PathBuf {
    let ckpt = dir.join("model.ckpt");
    run_ok(
        capnet()
            .args([
                "train",
                "--epochs",
                epochs,
                "--embed-dim",
                "24",
                "--hidden-dim",
                "24",
                "--seed",
                "0",
            ])
            .arg("--annotations")
            .arg(annotations)
            .arg("--features")
            .arg(features)
            .arg("--vocab")
            .arg(vocab)
            .arg("--out-checkpoint")
            .arg(&ckpt)
            .arg("--loss-csv")
            .arg(dir.join("loss.csv")),
    );
    ckpt
}

#[test]
fn vocab_build_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (annotations, _) = write_dataset(dir.path());
    let a = build_vocab(dir.path(), &annotations);
    let first = std::fs::read(&a).unwrap();
    let b = dir.path().join("vocab2.tsv");
    run_ok(
        capnet()
            .args(["build-vocab", "--min-count", "1"])
            .arg("--annotations")
            .arg(&annotations)
            .arg("--out")
            .arg(&b),
    );
    assert_eq!(first, std::fs::read(&b).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("<start>\t0\t"), "vocab file:\n{text}");
    assert!(text.contains("<stop>\t1\t"));
    assert!(text.contains("<unk>\t2\t"));
}

#[test]
fn repeated_training_gives_bit_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (annotations, features) = write_dataset(dir.path());
    let vocab = build_vocab(dir.path(), &annotations);

    let d1 = dir.path().join("run1");
    let d2 = dir.path().join("run2");
    std::fs::create_dir_all(&d1).unwrap();
    std::fs::create_dir_all(&d2).unwrap();
    let c1 = train(&d1, &annotations, &features, &vocab, "8");
    let c2 = train(&d2, &annotations, &features, &vocab, "8");
    assert_eq!(
        std::fs::read(&c1).unwrap(),
        std::fs::read(&c2).unwrap(),
        "same seed and config must produce bit-identical checkpoints"
    );
    let loss = std::fs::read_to_string(d1.join("loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,mean_per_token_loss\n"));
    assert_eq!(loss.lines().count(), 9, "header plus one row per epoch");
    assert_eq!(loss, std::fs::read_to_string(d2.join("loss.csv")).unwrap());
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (annotations, features) = write_dataset(dir.path());
    let vocab = build_vocab(dir.path(), &annotations);

    let full_dir = dir.path().join("full");
    std::fs::create_dir_all(&full_dir).unwrap();
    let full = train(&full_dir, &annotations, &features, &vocab, "8");

    let split_dir = dir.path().join("split");
    std::fs::create_dir_all(&split_dir).unwrap();
    let half = train(&split_dir, &annotations, &features, &vocab, "4");
    let resumed = split_dir.join("resumed.ckpt");
    run_ok(
        capnet()
            .args([
                "train", "--epochs", "8", "--embed-dim", "24", "--hidden-dim", "24", "--seed",
                "0",
            ])
            .arg("--annotations")
            .arg(&annotations)
            .arg("--features")
            .arg(&features)
            .arg("--vocab")
            .arg(&vocab)
            .arg("--resume")
            .arg(&half)
            .arg("--out-checkpoint")
            .arg(&resumed)
            .arg("--loss-csv")
            .arg(split_dir.join("loss.csv")),
    );
    assert_eq!(
        std::fs::read(&full).unwrap(),
        std::fs::read(&resumed).unwrap(),
        "resumed run must match the uninterrupted one bit for bit"
    );
}

#[test]
fn caption_then_evaluate_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (annotations, features) = write_dataset(dir.path());
    let vocab = build_vocab(dir.path(), &annotations);
    let ckpt = train(dir.path(), &annotations, &features, &vocab, "150");

    let captions = dir.path().join("captions.json");
    run_ok(
        capnet()
            .args(["caption", "--beam-width", "3", "--max-len", "8"])
            .arg("--checkpoint")
            .arg(&ckpt)
            .arg("--vocab")
            .arg(&vocab)
            .arg("--features")
            .arg(&features)
            .arg("--out")
            .arg(&captions),
    );
    let text = std::fs::read_to_string(&captions).unwrap();
    let records: serde_json::Value = serde_json::from_str(&text).unwrap();
    let records = records.as_array().unwrap();
    assert_eq!(records.len(), 20);
    // overfit model reproduces the two templates
    for r in records {
        let id = r["image_id"].as_i64().unwrap();
        let expected = if (id - 1) % 2 == 0 { "a cat" } else { "a dog" };
        assert_eq!(r["caption"].as_str().unwrap(), expected, "image {id}");
        assert!(r["log_prob"].as_f64().unwrap() <= 0.0);
    }

    let report_path = dir.path().join("eval.json");
    run_ok(
        capnet()
            .args(["evaluate", "--pooled"])
            .arg("--captions")
            .arg(&captions)
            .arg("--annotations")
            .arg(&annotations)
            .arg("--out")
            .arg(&report_path),
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    // candidates equal their references exactly, so BLEU is a perfect 100
    assert_eq!(report["average_bleu"].as_f64().unwrap(), 100.0);
    assert_eq!(report["pooled_bleu"].as_f64().unwrap(), 100.0);
    assert_eq!(report["per_image"].as_array().unwrap().len(), 20);
    assert_eq!(report["settings"]["max_n"].as_u64().unwrap(), 4);
}

#[test]
fn evaluate_pairs_file_and_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.json");
    std::fs::write(
        &pairs,
        r#"[{"image_id": 1, "candidate": "a cat on a mat", "references": ["a cat on a mat", "the cat sat"]}]"#,
    )
    .unwrap();
    let out = run_ok(
        capnet()
            .args(["evaluate", "--paper-fixture"])
            .arg("--pairs")
            .arg(&pairs),
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("published  63.0") || stdout.contains("published   63.0"),
        "fixture lines missing:\n{stdout}");
    assert!(stdout.contains("77.0"));
    assert!(stdout.contains("equality is not expected"));
    let report: serde_json::Value = serde_json::from_str(
        stdout.lines().skip_while(|l| !l.starts_with('{')).collect::<Vec<_>>().join("\n").as_str(),
    )
    .unwrap();
    assert_eq!(report["average_bleu"].as_f64().unwrap(), 100.0);
}

#[test]
fn caption_rejects_mismatched_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let (annotations, features) = write_dataset(dir.path());
    let vocab = build_vocab(dir.path(), &annotations);
    let ckpt = train(dir.path(), &annotations, &features, &vocab, "2");

    // vocabulary built from different text has a different hash
    let other_ann = dir.path().join("other.json");
    std::fs::write(
        &other_ann,
        r#"{"images": [{"id": 1}], "annotations": [{"image_id": 1, "caption": "totally different words here"}]}"#,
    )
    .unwrap();
    let other_vocab = dir.path().join("other-vocab.tsv");
    run_ok(
        capnet()
            .args(["build-vocab", "--min-count", "1"])
            .arg("--annotations")
            .arg(&other_ann)
            .arg("--out")
            .arg(&other_vocab),
    );
    let stderr = run_err(
        capnet()
            .arg("caption")
            .arg("--checkpoint")
            .arg(&ckpt)
            .arg("--vocab")
            .arg(&other_vocab)
            .arg("--features")
            .arg(&features)
            .arg("--out")
            .arg(dir.path().join("c.json")),
    );
    assert!(
        stderr.contains("vocabulary hash mismatch"),
        "stderr: {stderr}"
    );
}

#[test]
fn caption_rejects_unknown_image_ids() {
    let dir = tempfile::tempdir().unwrap();
    let (annotations, features) = write_dataset(dir.path());
    let vocab = build_vocab(dir.path(), &annotations);
    let ckpt = train(dir.path(), &annotations, &features, &vocab, "2");
    let stderr = run_err(
        capnet()
            .args(["caption", "--image-ids", "1,999"])
            .arg("--checkpoint")
            .arg(&ckpt)
            .arg("--vocab")
            .arg(&vocab)
            .arg("--features")
            .arg(&features)
            .arg("--out")
            .arg(dir.path().join("c.json")),
    );
    assert!(stderr.contains("999"), "stderr: {stderr}");
}

#[test]
fn train_rejects_missing_features() {
    let dir = tempfile::tempdir().unwrap();
    let (annotations, _) = write_dataset(dir.path());
    let vocab = build_vocab(dir.path(), &annotations);
    // feature file that lacks most of the annotated images
    let sparse = dir.path().join("sparse.csv");
    std::fs::write(&sparse, "image_id,8\n1,1,0,0,0,0,0,0,0\n").unwrap();
    let stderr = run_err(
        capnet()
            .args(["train", "--epochs", "1"])
            .arg("--annotations")
            .arg(&annotations)
            .arg("--features")
            .arg(&sparse)
            .arg("--vocab")
            .arg(&vocab)
            .arg("--out-checkpoint")
            .arg(dir.path().join("m.ckpt"))
            .arg("--loss-csv")
            .arg(dir.path().join("l.csv")),
    );
    assert!(
        stderr.contains("no feature row"),
        "stderr: {stderr}"
    );
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let (annotations, _) = write_dataset(dir.path());
    let cfg = dir.path().join("capnet.toml");
    std::fs::write(&cfg, "min_count = 100\n").unwrap();
    // min_count 100 prunes everything: only the reserved symbols remain
    let vocab = dir.path().join("v.tsv");
    let out = run_ok(
        capnet()
            .arg("--config")
            .arg(&cfg)
            .arg("build-vocab")
            .arg("--annotations")
            .arg(&annotations)
            .arg("--out")
            .arg(&vocab),
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("3 tokens"), "stdout: {stdout}");

    // the flag wins over the file
    let out = run_ok(
        capnet()
            .arg("--config")
            .arg(&cfg)
            .args(["build-vocab", "--min-count", "1"])
            .arg("--annotations")
            .arg(&annotations)
            .arg("--out")
            .arg(&vocab),
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(!stdout.contains("3 tokens"), "stdout: {stdout}");

    let stderr = run_err(
        capnet()
            .arg("--config")
            .arg(dir.path().join("missing.toml"))
            .args(["selfcheck"]),
    );
    assert!(stderr.contains("error"), "stderr: {stderr}");
}

#[test]
fn selfcheck_passes_and_negative_control_fails() {
    let out = run_ok(capnet().arg("selfcheck"));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("PASS"), "stdout: {stdout}");
    assert!(!stdout.contains("FAIL"), "stdout: {stdout}");

    let stderr = run_err(capnet().args(["selfcheck", "--corrupt-gradients"]));
    assert!(stderr.contains("error"), "stderr: {stderr}");
}
