use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "d_w=6",
    "--set",
    "d_s=6",
    "--set",
    "d_l=6",
    "--set",
    "d_f=6",
    "--set",
    "embedding_dim=6",
    "--set",
    "min_label_count=5",
    "--set",
    "batch_size=16",
    "--set",
    "epochs=1",
];

fn dladan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dladan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = dladan(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Runs `sub` with `--flag path` pairs, the small model overrides and `extra`.
fn ok_small(sub: &str, paths: &[(&str, &Path)], extra: &[&str]) {
    let mut args = vec![sub.to_string()];
    for (flag, path) in paths {
        args.push(flag.to_string());
        args.push(p(path).to_string());
    }
    args.extend(SMALL.iter().chain(extra).map(|s| s.to_string()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&args);
}

fn synth_and_preprocess(root: &Path, seed: &str) {
    ok(&[
        "synth",
        "--out",
        p(&root.join("raw")),
        "--seed",
        seed,
        "--set",
        "cases_per_head_article=30",
    ]);
    ok_small("preprocess", &[("--input", &root.join("raw")), ("--out", &root.join("data"))], &[]);
}

#[test]
fn synth_preprocess_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synth_and_preprocess(root, "1");
    for f in ["train.jsonl", "valid.jsonl", "test.jsonl", "articles.jsonl", "labels.json", "vocab.json"] {
        assert!(root.join("data").join(f).exists(), "missing {f}");
    }

    ok_small("train", &[("--data", &root.join("data")), ("--out", &root.join("run"))], &[]);
    let log = std::fs::read_to_string(root.join("run/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2, "one warm-up and one main epoch:\n{log}");
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["loss"].as_f64().unwrap().is_finite());
    }

    ok(&[
        "eval",
        "--checkpoint",
        p(&root.join("run/checkpoint")),
        "--data",
        p(&root.join("data")),
        "--out",
        p(&root.join("eval")),
    ]);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("eval/metrics.json")).unwrap()).unwrap();
    for task in ["law", "charge", "penalty"] {
        let f1 = metrics[task]["f1"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f1), "{task} f1 {f1}");
    }
    let preds = std::fs::read_to_string(root.join("eval/predictions.jsonl")).unwrap();
    let test = std::fs::read_to_string(root.join("data/test.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), test.lines().count());
}

#[test]
fn ablation_variant_is_recorded_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synth_and_preprocess(root, "2");
    ok_small(
        "train",
        &[("--data", &root.join("data")), ("--out", &root.join("run"))],
        &["--set", "ablation=no_All"],
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("run/checkpoint/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["variant"], "no_All");
}

#[test]
fn eval_rejects_checkpoint_from_other_vocab() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    synth_and_preprocess(&a, "3");
    synth_and_preprocess(&b, "4");
    ok_small("train", &[("--data", &a.join("data")), ("--out", &a.join("run"))], &[]);
    let out = dladan(&[
        "eval",
        "--checkpoint",
        p(&a.join("run/checkpoint")),
        "--data",
        p(&b.join("data")),
        "--out",
        p(&dir.path().join("eval")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(last).unwrap();
    assert!(v["error"].as_str().unwrap().contains("mismatch"), "{stderr}");
}

#[test]
fn bad_arguments_exit_nonzero() {
    let out = dladan(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let out = dladan(&["synth", "--out", p(dir.path()), "--set", "bogus=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown synth key"));

    let out = dladan(&["train", "--data", p(dir.path()), "--out", p(dir.path()), "--set", "theta=2"]);
    assert_eq!(out.status.code(), Some(1));
}
