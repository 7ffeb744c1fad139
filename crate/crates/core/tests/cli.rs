use std::fs;
use std::path::Path;
use std::process::Command;

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_pulseflow");

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["pulseflow"];
    full.extend_from_slice(args);
    let code = pulseflow::cli::run(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path) {
    let (code, out, err) = run(&[
        "gen",
        "--seed",
        "4",
        "--out",
        path(dir),
        "--set",
        "length=2000",
        "--set",
        r#"anomalies=["spike:1700:5:4", "level_shift:1850:30:2", "period_break:900:30:7"]"#,
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("2000 points"), "{out}");
}

fn train(data: &Path, out: &Path) {
    let (code, _, err) = run(&[
        "train",
        "--data",
        path(data),
        "--out",
        path(out),
        "--seed",
        "4",
        "--set",
        "epochs=2",
    ]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn gen_train_score_eval_pipeline() {
    let tmp = TempDir::new().unwrap();
    let (gdir, tdir) = (tmp.path().join("gen"), tmp.path().join("train"));
    gen(&gdir);
    let data = gdir.join("data.csv");
    let before = fs::read(&data).unwrap();
    assert!(gdir.join("resolved_config.toml").exists());

    train(&data, &tdir);
    let ck = tdir.join("checkpoint.json");
    assert!(ck.exists());
    let history = fs::read_to_string(tdir.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,l_nf,l_sim,l_ind,val_nll\n"));
    assert_eq!(history.lines().count(), 4);

    let sdir = tmp.path().join("score");
    let (code, out, err) = run(&[
        "score",
        "--data",
        path(&data),
        "--checkpoint",
        path(&ck),
        "--out",
        path(&sdir),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("[1600, 2000)"), "{out}");
    let scores = fs::read_to_string(sdir.join("scores.csv")).unwrap();
    assert!(scores.starts_with("index,timestamp,score,log_likelihood,coverage,label\n"));
    assert_eq!(scores.lines().count(), 401);
    assert!(sdir.join("diagnostics.csv").exists());

    let (code, out, err) = run(&["eval", "--out", path(&sdir)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("auroc = 0."), "{out}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sdir.join("summary.json")).unwrap()).unwrap();
    let auroc = summary["auroc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auroc));
    assert_eq!(summary["points"], 400);
    assert!(sdir.join("histogram.csv").exists());

    assert_eq!(fs::read(&data).unwrap(), before, "input data was modified");
}

#[test]
fn inspect_reports_the_dominant_period() {
    let tmp = TempDir::new().unwrap();
    gen(tmp.path());
    let data = tmp.path().join("data.csv");
    let (code, out, err) = run(&["inspect", "--data", path(&data), "--out", path(tmp.path())]);
    assert_eq!(code, 0, "{err}");
    assert!(out.lines().any(|l| l == "p_g = 20"), "{out}");
    assert!(out.contains("F_S[x0] = "), "{out}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("inspect.json")).unwrap()).unwrap();
    assert_eq!(report["global_period"], 20);
}

#[test]
fn training_is_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    gen(&tmp.path().join("gen"));
    let data = tmp.path().join("gen").join("data.csv");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train(&data, &a);
    train(&data, &b);
    for file in ["history.csv", "checkpoint.json"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn generation_is_seeded() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a);
    gen(&b);
    assert_eq!(
        fs::read(a.join("data.csv")).unwrap(),
        fs::read(b.join("data.csv")).unwrap()
    );
    let (code, _, _) = run(&["gen", "--seed", "5", "--out", path(&b), "--set", "length=2000"]);
    assert_eq!(code, 0);
    assert_ne!(
        fs::read(a.join("data.csv")).unwrap(),
        fs::read(b.join("data.csv")).unwrap()
    );
}

#[test]
fn config_file_and_overrides_combine() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "length = 300\ndims = 2\nperiods = [10]\namplitudes = [1.0]\n").unwrap();
    let (code, _, err) = run(&[
        "gen",
        "--config",
        path(&cfg),
        "--set",
        "dims=4",
        "--out",
        path(tmp.path()),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(tmp.path().join("data.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "timestamp,x0,x1,x2,x3,label");
    assert_eq!(text.lines().count(), 301);
    let resolved = fs::read_to_string(tmp.path().join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("dims = 4"), "{resolved}");
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.csv");

    let (code, _, err) = run(&["train", "--data", path(&missing), "--out", path(tmp.path())]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error: io: "), "{err}");

    let (code, _, err) = run(&["gen", "--out", path(tmp.path()), "--set", "hiden=3"]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error: config: ") && err.contains("hiden"), "{err}");

    let (code, _, err) = run(&["score", "--data", path(&missing)]);
    assert_eq!(code, 1);
    assert!(err.contains("checkpoint"), "{err}");

    let (code, _, err) = run(&["frobnicate"]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error: usage: "), "{err}");

    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "timestamp,x0\n0,1.0\n1,oops\n").unwrap();
    let (code, _, err) = run(&["inspect", "--data", path(&bad)]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error: "), "{err}");
}

#[test]
fn binary_reports_errors_on_stderr() {
    let out = Command::new(BIN).arg("bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: usage: "));

    let out = Command::new(BIN).args(["eval"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scores"));

    let out = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let help = String::from_utf8_lossy(&out.stdout);
    for cmd in ["gen", "train", "score", "eval", "inspect"] {
        assert!(help.contains(cmd), "{help}");
    }
}
