use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmfl_core::SimConfig;

fn mmfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmfl")).args(args).output().unwrap()
}

fn tiny(dir: &Path) -> PathBuf {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
    let mut cfg = SimConfig::load(root).unwrap();
    cfg.sim.max_rounds = 12;
    cfg.rl.episodes = 2;
    cfg.rl.steps_per_episode = 16;
    cfg.rl.minibatch = 8;
    cfg.rl.hidden = vec![8];
    let path = dir.join("tiny.json");
    fs::write(&path, cfg.to_json_pretty()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    let out = tmp.path().join("sim");
    let o = mmfl(&["simulate", "--config", s(&cfg), "--seed", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("seed 1: feasible"));
    for f in ["metrics.csv", "losses.csv", "plot_data.csv", "episode.jsonl", "summary.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let header = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(header.starts_with("round,task,participants,leader_id"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 1);
    assert_eq!(summary["scheduler"], "era");
}

#[test]
fn train_then_evaluate_with_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    let train = tmp.path().join("train");
    let o = mmfl(&["train", "--config", s(&cfg), "--seed", "2", "--scheduler", "happo", "--out", s(&train)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = train.join("checkpoint.json");
    assert!(ckpt.exists() && train.join("curve.csv").exists());
    let curve = fs::read_to_string(train.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);

    let eval = tmp.path().join("eval");
    let o = mmfl(&[
        "evaluate", "--config", s(&cfg), "--seed", "2", "--scheduler", "happo", "--policy", s(&ckpt), "--out", s(&eval),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(eval.join("metrics.csv").exists());
    assert!(!eval.join("checkpoint.json").exists());
}

#[test]
fn several_seeds_get_their_own_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    let out = tmp.path().join("multi");
    let o = mmfl(&["simulate", "--config", s(&cfg), "--seed", "1", "--seed", "2", "--out", s(&out)]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);
    assert!(out.join("seed-1/metrics.csv").exists() && out.join("seed-2/metrics.csv").exists());
    assert_ne!(
        fs::read(out.join("seed-1/episode.jsonl")).unwrap(),
        fs::read(out.join("seed-2/episode.jsonl")).unwrap()
    );
}

#[test]
fn nash_and_verify_bounds_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    let nash = tmp.path().join("nash");
    assert!(mmfl(&["nash", "--config", s(&cfg), "--seed", "0", "--out", s(&nash)]).status.success());
    let ne: serde_json::Value = serde_json::from_str(&fs::read_to_string(nash.join("ne.json")).unwrap()).unwrap();
    assert!(ne["omega_trace"].as_array().is_some_and(|t| !t.is_empty()));

    let vb = tmp.path().join("vb");
    assert!(mmfl(&["verify-bounds", "--config", s(&cfg), "--seed", "0", "--out", s(&vb)]).status.success());
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(vb.join("verification.json")).unwrap()).unwrap();
    assert_eq!(rep["rounds"], 12);
    assert_eq!(rep["replicates"], 50);
}

#[test]
fn bad_invocations_fail_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    let out = tmp.path().join("x");
    let o = mmfl(&["train", "--config", s(&cfg), "--seed", "0", "--scheduler", "era", "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("learned scheduler"));

    let o = mmfl(&["simulate", "--config", "/nonexistent.json", "--seed", "0", "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let o = mmfl(&["simulate", "--config", s(&cfg), "--seed", "0", "--scheduler", "nope", "--out", s(&out)]);
    assert!(!o.status.success());
}
