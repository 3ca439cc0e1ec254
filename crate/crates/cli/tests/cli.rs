use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = r#"
alphabet_size = 4
concepts = 4
planted = 2
families = 8
languages_per_family = 2
eos_prob = 0.4
"#;

fn formmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_formmi"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn config(dir: &Path, extra: &str) -> String {
    let text = format!(
        r#"
[synthetic]
seed = 1
[synthetic.spec]
{SPEC}
[model]
embedding_dim = 4
hidden_dim = 32
max_epochs = 3
patience = 2
batch_size = 8
learning_rate = 0.01
[ensemble]
seeds = 2
[analysis]
n_permutations = 200
min_joint = 1
{extra}
"#
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn synth_then_ingest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, SPEC).unwrap();
    let tsv = dir.path().join("syn.tsv");
    let out = formmi(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        tsv.to_str().unwrap(),
        "--oracle",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("\"mi\""));

    let again = dir.path().join("again.tsv");
    let out = formmi(&[
        "ingest",
        "--input",
        tsv.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("16 doculects"));
    assert_eq!(fs::read(&tsv).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn pipeline_report_analyze_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = formmi(&["pipeline", "--config", &cfg, "--run-dir", a.to_str().unwrap(), "--workers", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("MI "));

    let out = formmi(&["report", a.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("Average") && text.contains("Pacific, Americas"));

    let out = formmi(&["analyze", a.to_str().unwrap(), "--granularity", "concept", "--q", "0.2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("concepts:"));
    assert_eq!(code(&formmi(&["report", a.to_str().unwrap()])), 0);
    let out = formmi(&["analyze", a.to_str().unwrap(), "--granularity", "overall", "--n-perm", "500"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("MI "));

    let out = formmi(&[
        "pipeline",
        "--config",
        &cfg,
        "--run-dir",
        b.to_str().unwrap(),
        "--fold-scheme",
        "family",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = formmi(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("\"df\""));
}

#[test]
fn train_writes_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let models = dir.path().join("models");
    let out = formmi(&["train", "--config", &cfg, "--fold", "1", "--seeds", "1", "--out", models.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(models.join("fold1_seed0_uncond.json").exists());
    assert!(models.join("fold1_seed0_cond.json").exists());
}

#[test]
fn hyperopt_prints_a_model_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let hist = dir.path().join("h.jsonl");
    let out = formmi(&[
        "hyperopt",
        "--config",
        &cfg,
        "--budget",
        "2",
        "--history",
        hist.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("[model]"));
    assert_eq!(fs::read_to_string(&hist).unwrap().lines().count(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // Config errors.
    let bad = config(dir.path(), "bogus = 1");
    assert_eq!(code(&formmi(&["pipeline", "--config", &bad, "--run-dir", "x"])), 2);
    assert_eq!(code(&formmi(&["pipeline", "--config", "/nonexistent/run.toml"])), 3);
    assert_eq!(code(&formmi(&["frobnicate"])), 2);

    // Data errors.
    let tsv = dir.path().join("bad.tsv");
    fs::write(&tsv, "not\ta\twordlist\n").unwrap();
    assert_eq!(code(&formmi(&["ingest", "--input", tsv.to_str().unwrap()])), 3);
    assert_eq!(code(&formmi(&["report", dir.path().to_str().unwrap()])), 3);
}
