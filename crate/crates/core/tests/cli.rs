use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use dlport::cli::{run, EXIT_BACKEND, EXIT_OK, EXIT_PIPELINE, EXIT_USAGE};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn fx(rel: &str) -> String {
    fixtures().join(rel).to_string_lossy().into_owned()
}

fn dlport(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut argv = vec!["dlport"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut std::io::empty(), &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn tmp(dir: &tempfile::TempDir, rel: &str) -> String {
    dir.path().join(rel).to_string_lossy().into_owned()
}

fn pipeline_args(dict: &str) -> Vec<String> {
    let s = if dict.contains("pytorch-keras") {
        "pytorch-keras"
    } else {
        "keras-pytorch"
    };
    vec![
        "--db".into(),
        fx("db/pytorch.json"),
        "--db".into(),
        fx("db/keras.json"),
        "--dict".into(),
        dict.into(),
        "--template".into(),
        fx(&format!("prompts/{s}.txt")),
        "--backend".into(),
        fx("backend_mock.json"),
    ]
}

#[test]
fn ingest_writes_corpus_and_skips_noise() {
    let d = tempfile::tempdir().unwrap();
    let out = tmp(&d, "corpus");
    let (code, text) = dlport(&[
        "ingest",
        "--db",
        &fx("db/pytorch.json"),
        "--db",
        &fx("db/keras.json"),
        "--out",
        &out,
        &fx("corpus"),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(text.contains("pytorch: 5 units, 38 keywords"), "{text}");
    assert!(text.contains("keras: 3 units, 20 keywords"), "{text}");
    assert!(text.contains("duplicate unit"));
    for f in ["manifest.json", "pytorch.jsonl", "keras.jsonl", "bpe.json"] {
        assert!(d.path().join("corpus").join(f).exists(), "{f}");
    }
    let (code, text) = dlport(&[
        "inspect",
        "vocab",
        "--corpus",
        &out,
        "--framework",
        "keras",
        "--top",
        "2",
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().next().unwrap().ends_with("layers.Dense"));
}

#[test]
fn ingest_dry_run_writes_nothing() {
    let d = tempfile::tempdir().unwrap();
    let out = tmp(&d, "corpus");
    let (code, _) = dlport(&[
        "ingest",
        "--dry-run",
        "--db",
        &fx("db/pytorch.json"),
        "--out",
        &out,
        &fx("corpus"),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(!d.path().join("corpus").exists());
}

#[test]
fn missing_inputs_are_usage_errors() {
    assert_eq!(
        dlport(&["ingest", "--db", &fx("db/pytorch.json"), "/no/such/dir"]).0,
        EXIT_USAGE
    );
    assert_eq!(
        dlport(&["transpile", "--dict", "/no/such.json"]).0,
        EXIT_USAGE
    );
    assert_eq!(dlport(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(dlport(&["--help"]).0, EXIT_OK);
}

#[test]
fn committed_dictionaries_match_regeneration() {
    let d = tempfile::tempdir().unwrap();
    for pair in ["pytorch-keras", "keras-pytorch"] {
        let out = tmp(&d, pair);
        let (code, _) = dlport(&[
            "dict",
            "--scores",
            &fx(&format!("scores/{pair}.json")),
            "--out",
            &out,
        ]);
        assert_eq!(code, EXIT_OK);
        let fresh = std::fs::read_to_string(&out).unwrap();
        let committed = std::fs::read_to_string(fx(&format!("dict/{pair}.json"))).unwrap();
        assert_eq!(fresh, committed, "{pair}");
        let (code, diff) = dlport(&["inspect", "diff", &out, &fx(&format!("dict/{pair}.json"))]);
        assert_eq!((code, diff.as_str()), (EXIT_OK, ""));
    }
}

#[test]
fn dictionary_flags_change_the_result() {
    let (_, with) = dlport(&["dict", "--scores", &fx("scores/keras-pytorch.json")]);
    let (_, without) = dlport(&[
        "dict",
        "--scores",
        &fx("scores/keras-pytorch.json"),
        "--no-expand",
    ]);
    assert!(with.contains("activation -> +nn.ReLU()"), "{with}");
    assert!(!without.contains('+'));
    let (code, _) = dlport(&[
        "dict",
        "--scores",
        &fx("scores/keras-pytorch.json"),
        "--measure",
        "csls",
        "--k",
        "0",
    ]);
    assert_eq!(code, EXIT_USAGE);
    let (code, _) = dlport(&[
        "dict",
        "--scores",
        &fx("scores/keras-pytorch.json"),
        "--measure",
        "csls",
        "--k",
        "3",
    ]);
    assert_eq!(code, EXIT_OK);
}

#[test]
fn topk_ranks_and_rejects_unknown_keywords() {
    let (code, text) = dlport(&[
        "inspect",
        "topk",
        "--scores",
        &fx("scores/pytorch-keras.json"),
        "--keyword",
        "nn.Linear",
        "--top",
        "3",
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().next().unwrap().ends_with("layers.Dense"));
    let (code, _) = dlport(&[
        "inspect",
        "topk",
        "--scores",
        &fx("scores/pytorch-keras.json"),
        "--keyword",
        "nn.Nope",
    ]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn transpile_binary_reads_stdin() {
    let mut args = vec!["transpile".to_string()];
    args.extend(pipeline_args(&fx("dict/pytorch-keras.json")));
    let mut child = Command::new(env!("CARGO_BIN_EXE_dlport"))
        .args(&args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(include_bytes!("../fixtures/net/input.py"))
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        include_str!("../fixtures/net/expected.py")
    );
}

#[test]
fn transpile_to_file_and_json() {
    let d = tempfile::tempdir().unwrap();
    let src = tmp(&d, "in.py");
    std::fs::write(
        &src,
        "self.layers = [layers.Dense(units=10, activation='relu')]\n",
    )
    .unwrap();
    let out = tmp(&d, "out.py");
    let mut args = vec!["--format".to_string(), "json".into(), "transpile".into()];
    args.extend(pipeline_args(&fx("dict/keras-pytorch.json")));
    args.extend([src.clone(), "--output".into(), out.clone()]);
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let (code, json) = dlport(&argv);
    assert_eq!(code, EXIT_OK);
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        "self.layers = [nn.Linear(out_features=10), nn.ReLU()]\n"
    );
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(
        v["translations"]["1"],
        serde_json::json!(["nn.Linear", "nn.ReLU()"])
    );
}

#[test]
fn failures_map_to_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let src = tmp(&d, "in.py");
    std::fs::write(
        &src,
        "self.fc = layers.Dense(units=10, activation='relu')\n",
    )
    .unwrap();
    let mut args = vec!["transpile".to_string()];
    args.extend(pipeline_args(&fx("dict/keras-pytorch.json")));
    args.push(src.clone());
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(dlport(&argv).0, EXIT_PIPELINE);

    let backend = tmp(&d, "backend.json");
    std::fs::write(
        &backend,
        r#"{"kind":"http-completion","endpoint":"http://127.0.0.1:9/v1/completions","timeout_ms":500,"retry":{"max_retries":0}}"#,
    )
    .unwrap();
    std::fs::write(&src, "self.fc = layers.Dense(units=10)\n").unwrap();
    let mut args = vec!["transpile".to_string()];
    args.extend(pipeline_args(&fx("dict/keras-pytorch.json")));
    let n = args.len();
    args[n - 1] = backend;
    args.push(src);
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(dlport(&argv).0, EXIT_BACKEND);
}

#[test]
fn eval_report_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    for run_dir in ["a", "b"] {
        let mut args = vec!["eval".to_string()];
        args.extend(pipeline_args(&fx("dict/pytorch-keras.json")));
        args.extend([
            "--eval-set".into(),
            fx("eval/pytorch-keras.jsonl"),
            "--scores".into(),
            fx("scores/pytorch-keras.json"),
            "--seeds".into(),
            "10,20".into(),
            "--out".into(),
            tmp(&d, run_dir),
        ]);
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        let (code, text) = dlport(&argv);
        assert_eq!(code, EXIT_OK, "{text}");
        assert!(text.contains("p@1 1.0000"), "{text}");
        hashes.push(text.lines().last().unwrap().to_string());
        assert!(d.path().join(run_dir).join("report.json").exists());
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn train_with_config_then_resume() {
    let d = tempfile::tempdir().unwrap();
    let corpus = tmp(&d, "corpus");
    let cfg = fx("desk.json");
    assert_eq!(
        dlport(&["--config", &cfg, "ingest", "--out", &corpus, &fx("corpus")]).0,
        EXIT_OK
    );

    let short = tmp(&d, "short");
    let (code, text) = dlport(&[
        "--config",
        &cfg,
        "train",
        "--corpus",
        &corpus,
        "--out",
        &short,
        "--provider",
        "hash",
        "--total-samples",
        "1280",
        "--batch-size",
        "64",
        "--checkpoint-every",
        "10",
    ]);
    assert_eq!(code, EXIT_OK, "{text}");
    assert!(text.contains("20 steps"), "{text}");
    for f in [
        "checkpoint.json",
        "last.json",
        "metrics.jsonl",
        "vocabs.json",
    ] {
        assert!(d.path().join("short").join(f).exists(), "{f}");
    }
    let last = tmp(&d, "short/last.json");
    let (code, text) = dlport(&[
        "--config",
        &cfg,
        "train",
        "--corpus",
        &corpus,
        "--out",
        &short,
        "--provider",
        "hash",
        "--resume",
        &last,
        "--total-samples",
        "2560",
    ]);
    assert_eq!(code, EXIT_OK, "{text}");
    assert!(text.contains("40 steps"), "{text}");

    let metrics = std::fs::read_to_string(tmp(&d, "short/metrics.jsonl")).unwrap();
    assert!(
        metrics.contains("\"step\":1,"),
        "metrics were truncated on resume"
    );
    assert!(metrics.contains("\"step\":40,"));

    let (code, text) = dlport(&["dict", "--train-dir", &short, "--measure", "cosine"]);
    assert_eq!(code, EXIT_OK);
    assert!(text.starts_with("pytorch -> keras (Cosine)"), "{text}");
}
