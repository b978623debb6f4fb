use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn siglab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siglab"))
        .args(args)
        .env_remove("SIGLAB_REASONER_URL")
        .output()
        .expect("spawn siglab")
}

fn ok(args: &[&str]) -> String {
    let out = siglab(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], code: i32, class: &str) -> String {
    let out = siglab(args);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(out.status.code(), Some(code), "{args:?}: {stderr}");
    assert!(stderr.starts_with(&format!("error[{class}] ")), "{args:?}: {stderr}");
    stderr
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// A small dataset and a quickly trained model shared by the tests that need weights.
fn weights() -> &'static Path {
    static WEIGHTS: OnceLock<PathBuf> = OnceLock::new();
    WEIGHTS.get_or_init(|| {
        let dir = scratch("model");
        let data = dir.join("data");
        let w = dir.join("weights.json");
        ok(&["gen-data", "--out", s(&data), "--scenarios", "balanced", "--sim-seeds", "5", "--duration", "900"]);
        ok(&["train", "--data", s(&data), "--out", s(&w), "--epochs", "2", "--hidden", "8"]);
        w
    })
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn help_text_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for cmd in ["", "gen-data", "train", "run", "experiment", "ablate", "report"] {
        let args: Vec<&str> = if cmd.is_empty() { vec!["--help"] } else { vec![cmd, "--help"] };
        let text = ok(&args);
        let file = golden.join(format!("{}.txt", if cmd.is_empty() { "siglab" } else { cmd }));
        if update {
            fs::write(&file, &text).unwrap();
        } else {
            let want = fs::read_to_string(&file).unwrap_or_else(|_| panic!("missing {}; rerun with UPDATE_GOLDEN=1", file.display()));
            assert_eq!(text, want, "help for {cmd:?} drifted; rerun with UPDATE_GOLDEN=1 if intended");
        }
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let msg = fails(&["run", "--bogus"], 2, "usage");
    assert!(msg.contains("--bogus"));
    fails(&["frobnicate"], 2, "usage");
    fails(&["run", "--seed", "minus-one"], 2, "usage");
}

#[test]
fn runtime_errors_are_classified() {
    let dir = scratch("errors");
    fails(&["run", "--scenario", "rush_hour", "--out", s(&dir.join("a"))], 1, "config");
    fails(&["run", "--controller", "psychic", "--out", s(&dir.join("b"))], 1, "config");
    fails(&["run", "--controller", "llm_augmented", "--backend", "carrier-pigeon", "--out", s(&dir.join("c"))], 1, "config");
    fails(&["run", "--controller", "llm_augmented", "--backend", "http", "--out", s(&dir.join("c"))], 1, "config");
    let missing = dir.join("none.json");
    let msg = fails(&["run", "--controller", "lstm_predictive", "--weights", s(&missing), "--out", s(&dir.join("d"))], 1, "missing-file");
    assert!(msg.contains("none.json"));
    fails(&["train", "--data", s(&dir.join("nowhere"))], 1, "missing-file");
    fails(&["report", "--dir", s(&dir)], 1, "missing-file");
    fs::write(dir.join("bad.json"), "{ not json").unwrap();
    fails(&["--config", s(&dir.join("bad.json")), "run"], 1, "config");
}

#[test]
fn zero_duration_dataset_is_rejected() {
    let dir = scratch("empty");
    fails(&["gen-data", "--out", s(&dir), "--scenarios", "balanced", "--sim-seeds", "1", "--duration", "0"], 1, "empty-dataset");
    assert!(!dir.join("dataset.json").exists());
}

#[test]
fn gen_data_is_reproducible() {
    let dir = scratch("gen");
    let digest = |name: &str| {
        let out = dir.join(name);
        ok(&["gen-data", "--out", s(&out), "--seed", "7", "--scenarios", "balanced,fluctuating", "--sim-seeds", "3", "--duration", "600"]);
        let m = read_json(&out.join("manifest.json"));
        let files = m["files"].as_array().unwrap().clone();
        assert!(files.iter().any(|f| f["path"] == "dataset.json"));
        files.into_iter().map(|f| (f["path"].clone(), f["sha256"].clone())).collect::<Vec<_>>()
    };
    assert_eq!(digest("one"), digest("two"));
    let split = read_json(&dir.join("one/split.json"));
    let n = split["samples"].as_u64().unwrap();
    assert!(n > 0);
    assert_eq!(split["train"].as_u64().unwrap() + split["validation"].as_u64().unwrap() + split["test"].as_u64().unwrap(), n);
}

#[test]
fn fixed_time_run_writes_metrics() {
    let dir = scratch("fixed");
    let stdout = ok(&["run", "--controller", "fixed_time", "--scenario", "directional_peak", "--duration", "600", "--out", s(&dir)]);
    assert!(stdout.contains("avg waiting time"));
    for f in ["metrics.json", "audit.json", "decisions.jsonl", "exchanges.jsonl", "snapshots.jsonl", "steps.jsonl", "manifest.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let m = read_json(&dir.join("metrics.json"));
    for key in ["avg_waiting_time", "avg_queue_length", "avg_travel_time", "throughput", "stops_per_vehicle", "co2_kg", "constraint_violation_rate", "llm_trigger_rate"] {
        assert!(m.get(key).is_some(), "metrics lacks {key}");
    }
    assert_eq!(m["constraint_violation_rate"], 0.0);
    assert_eq!(m["llm_trigger_rate"], 0.0);
    let decisions = fs::read_to_string(dir.join("decisions.jsonl")).unwrap();
    assert_eq!(decisions.lines().count() as u64, m["decisions"].as_u64().unwrap());
    assert_eq!(fs::read_to_string(dir.join("exchanges.jsonl")).unwrap(), "");
}

#[test]
fn llm_run_with_heuristic_backend() {
    let dir = scratch("llm");
    let stdout = ok(&["run", "--controller", "llm_augmented", "--scenario", "sudden_surge", "--duration", "900", "--weights", s(weights()), "--out", s(&dir)]);
    assert!(stdout.contains("trigger rate"));
    let m = read_json(&dir.join("metrics.json"));
    assert!(m["triggered"].as_u64().unwrap() > 0);
    assert_eq!(m["fallbacks"], 0);
    assert_eq!(m["constraint_violation_rate"], 0.0);
    let exchanges = fs::read_to_string(dir.join("exchanges.jsonl")).unwrap();
    assert_eq!(exchanges.lines().count() as u64, m["triggered"].as_u64().unwrap());
}

#[test]
fn unreachable_http_backend_falls_back() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = scratch("http");
    let out = Command::new(env!("CARGO_BIN_EXE_siglab"))
        .args(["run", "--controller", "llm_augmented", "--scenario", "sudden_surge", "--duration", "600"])
        .args(["--weights", s(weights()), "--backend", "http", "--out", s(&dir)])
        .env("SIGLAB_REASONER_URL", format!("http://127.0.0.1:{port}/v1/chat/completions"))
        .env("SIGLAB_REASONER_TIMEOUT_MS", "200")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_json(&dir.join("metrics.json"));
    assert!(m["fallbacks"].as_u64().unwrap() > 0);
    assert_eq!(m["fallbacks"], m["triggered"]);
    assert_eq!(m["constraint_violation_rate"], 0.0);
}

#[test]
fn failing_backend_matches_predictive_run() {
    let dir = scratch("failing");
    let w = s(weights());
    ok(&["run", "--controller", "lstm_predictive", "--scenario", "sudden_surge", "--duration", "600", "--weights", w, "--out", s(&dir.join("lstm"))]);
    ok(&["run", "--controller", "llm_augmented", "--scenario", "sudden_surge", "--duration", "600", "--weights", w, "--backend", "failing:garbage", "--out", s(&dir.join("llm"))]);
    let finals = |d: &str| -> Vec<Value> {
        fs::read_to_string(dir.join(d).join("decisions.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<Value>(l).unwrap()["final_command"].clone())
            .collect()
    };
    assert_eq!(finals("lstm"), finals("llm"));
}

#[test]
fn experiment_and_report_are_idempotent() {
    let dir = scratch("experiment");
    let w = s(weights());
    let args = ["experiment", "--seeds", "1,2", "--duration", "600", "--weights", w, "--out", s(&dir)];
    ok(&args);
    let tables = ["matrix.csv", "long.csv", "overall.csv", "improvement.csv", "reasoner.csv"];
    let first: Vec<Vec<u8>> = tables.iter().map(|t| fs::read(dir.join(t)).unwrap()).collect();
    let matrix = String::from_utf8(first[0].clone()).unwrap();
    assert_eq!(matrix.lines().count(), 1 + 3 * 4 * 2);

    for t in tables {
        fs::remove_file(dir.join(t)).unwrap();
    }
    ok(&["report", "--dir", s(&dir)]);
    let rebuilt: Vec<Vec<u8>> = tables.iter().map(|t| fs::read(dir.join(t)).unwrap()).collect();
    assert_eq!(first, rebuilt);

    ok(&args);
    let again: Vec<Vec<u8>> = tables.iter().map(|t| fs::read(dir.join(t)).unwrap()).collect();
    assert_eq!(first, again);
}

#[test]
fn ablation_writes_its_table() {
    let dir = scratch("ablation");
    ok(&["ablate", "--seeds", "1", "--duration", "600", "--weights", s(weights()), "--out", s(&dir)]);
    let table = fs::read_to_string(dir.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(!dir.join("overall.csv").exists());
}
