use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use maxwent::checkpoint::Checkpoint;

fn maxwent(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maxwent"))
        .args(args)
        .current_dir(dir)
        .env_remove("MAXWENT_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = maxwent(dir, args);
    assert!(
        out.status.success(),
        "maxwent {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SMALL: [&str; 4] = ["--hidden", "12,12", "--pretrain-iters", "400"];

fn pretrained(dir: &Path) -> PathBuf {
    let mut args = vec!["pretrain", "--seed", "2", "--out", "ck.json"];
    args.extend(SMALL);
    ok(dir, &args);
    dir.join("ck.json")
}

fn entropy_column(path: &Path) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == "entropy_proxy").unwrap();
    r.records().map(|row| row.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn help_exits_zero_for_every_command() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["pretrain", "train", "eval", "benchmark", "verify", "clip-sweep"] {
        let out = maxwent(dir.path(), &[cmd, "--help"]);
        assert!(out.status.success(), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("--"));
    }
    assert!(maxwent(dir.path(), &["--help"]).status.success());
}

#[test]
fn usage_and_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = maxwent(dir.path(), &["pretrain", "--dataset", "two-moons"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));

    let out = maxwent(dir.path(), &["eval", "--in", "missing.json", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));

    let out = maxwent(dir.path(), &["pretrain", "--out", "no/such/dir/ck.json"]);
    assert_eq!(out.status.code(), Some(2));

    let out = maxwent(dir.path(), &["pretrain", "--dataset", "csv", "--out", "ck.json"]);
    assert_eq!(out.status.code(), Some(2));

    let out = maxwent(dir.path(), &["pretrain", "--lr", "-1", "--out", "ck.json"]);
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_maxwent"))
        .args(["verify"])
        .env("MAXWENT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("ck.json").exists());
}

#[test]
fn pretrain_writes_a_loadable_deterministic_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = pretrained(dir.path());
    let ckpt = Checkpoint::load(&path).unwrap();
    assert_eq!(ckpt.format, "maxwent-ckpt-v1");
    assert!(ckpt.is_deterministic());
    assert_eq!(ckpt.dim, ckpt.spec.layout().dim());
    assert_eq!(ckpt.dim, 2 * 12 + 12 + 12 * 12 + 12 + 12 + 1);
    let first = std::fs::read(&path).unwrap();
    pretrained(dir.path());
    assert_eq!(first, std::fs::read(&path).unwrap());
}

#[test]
fn deep_ensemble_members_use_distinct_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["pretrain", "--members", "5", "--out", "de.json"];
    args.extend(SMALL);
    ok(dir.path(), &args);
    let ckpt = Checkpoint::load(&dir.path().join("de.json")).unwrap();
    assert_eq!(ckpt.members.len(), 5);
    for i in 0..5 {
        for j in i + 1..5 {
            assert_ne!(ckpt.members[i].mean, ckpt.members[j].mean);
        }
    }
}

#[test]
fn train_entropy_follows_lambda_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    pretrained(dir.path());
    let base = ["train", "--in", "ck.json", "--method", "maxwent-svd", "--iters", "1500"];
    let run = |lambda: &str, out: &str, log: &str| {
        let mut args = base.to_vec();
        args.extend(["--lambda", lambda, "--acceptance", "final", "--out", out, "--log", log]);
        ok(dir.path(), &args);
    };
    run("10", "a.json", "a.csv");
    let h = entropy_column(&dir.path().join("a.csv"));
    assert!(h.last().unwrap() > h.first().unwrap());

    run("0", "b.json", "b.csv");
    let h = entropy_column(&dir.path().join("b.csv"));
    assert!(h.last().unwrap() <= h.first().unwrap());

    run("10", "c.json", "c.csv");
    let a = Checkpoint::load(&dir.path().join("a.json")).unwrap();
    let c = Checkpoint::load(&dir.path().join("c.json")).unwrap();
    assert_eq!(a.members[0].raw, c.members[0].raw);
    assert!(a.members[0].tau.is_some());
    assert_eq!(a.members[0].bases.len(), a.spec.hidden.len() + 1);
}

fn uncertainty_column(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|row| row.unwrap()[2].to_string()).collect()
}

#[test]
fn eval_with_zero_clip_matches_the_vanilla_network() {
    let dir = tempfile::tempdir().unwrap();
    pretrained(dir.path());
    ok(dir.path(), &["train", "--in", "ck.json", "--iters", "300", "--out", "fit.json"]);
    ok(dir.path(), &["eval", "--in", "ck.json", "--out", "v.json", "--scores", "v.csv", "--p", "5"]);
    ok(
        dir.path(),
        &["eval", "--in", "fit.json", "--out", "c.json", "--scores", "c.csv", "--p", "5", "--clip", "0"],
    );
    assert_eq!(
        uncertainty_column(&dir.path().join("v.csv")),
        uncertainty_column(&dir.path().join("c.csv"))
    );
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("c.json")).unwrap()).unwrap();
    for key in ["method", "dataset", "split", "auroc", "fpr95", "test_nll", "p", "seed"] {
        assert!(report.get(key).is_some(), "{key}");
    }
    assert_eq!(report["clip"], 0.0);
    assert_eq!(report["method"], "maxwent-svd");
}

#[test]
fn clip_sweep_covers_the_default_levels() {
    let dir = tempfile::tempdir().unwrap();
    pretrained(dir.path());
    ok(dir.path(), &["train", "--in", "ck.json", "--iters", "300", "--out", "fit.json"]);
    ok(dir.path(), &["clip-sweep", "--in", "fit.json", "--out", "clip.csv", "--p", "5"]);
    let mut r = csv::Reader::from_path(dir.path().join("clip.csv")).unwrap();
    let clips: Vec<f64> = r.records().map(|row| row.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(clips, vec![f64::INFINITY, 10.0, 5.0, 2.0, 1.0, 0.5, 0.2, 0.1, 0.0]);
}

#[test]
fn verify_passes_and_detects_an_injected_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["verify"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 7);

    let out = maxwent(dir.path(), &["verify", "--lambda-mismatch", "0.05"]);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().find(|l| l.contains("scaling closed form")).unwrap();
    assert!(line.starts_with("FAIL") && line.contains("5.000e-2"), "{line}");
}

#[test]
fn benchmark_reports_every_split_and_method() {
    let dir = tempfile::tempdir().unwrap();
    let csv = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/diabetes.csv");
    let mut args = vec![
        "benchmark",
        "--csv",
        csv.to_str().unwrap(),
        "--methods",
        "vanilla,deep-ensemble,maxwent",
        "--members",
        "3",
        "--p",
        "5",
        "--iters",
        "200",
        "--out-dir",
        "out",
    ];
    args.extend(SMALL);
    ok(dir.path(), &args);
    let out = dir.path().join("out");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("benchmark.json")).unwrap()).unwrap();
    let entries = report["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2 * 3);
    assert!(entries.iter().all(|e| e["report"]["auroc"].is_number()));
    assert_eq!(entries[0]["split"], "extrapolation");
    assert_eq!(entries[3]["split"], "interpolation");
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 6);
    assert!(out.join("interpolation-deep-ensemble.json").is_file());
}
