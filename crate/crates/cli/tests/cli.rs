use std::path::Path;
use std::process::{Command, Output};

fn procure(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_procure"))
        .args(args)
        .env_remove("PROCURE_BENCH_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, trials: usize) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let json = format!(
        r#"{{
            "family": {{"kind": "large_market", "market": "additive", "n": 4096, "k_target": 512}},
            "mechanism": {{"kind": "posted_prices"}},
            "profile": "desk",
            "trials": {trials},
            "master_seed": 5
        }}"#
    );
    std::fs::write(&path, json).unwrap();
    path
}

#[test]
fn help_exits_zero() {
    let out = procure(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("audit-replay"));
}

#[test]
fn unknown_flag_is_a_config_error() {
    assert_eq!(procure(&["towers", "--n", "64", "--colour"]).status.code(), Some(3));
    assert_eq!(procure(&["frobnicate"]).status.code(), Some(3));
}

#[test]
fn missing_and_malformed_configs_exit_3() {
    assert_eq!(procure(&["simulate", "--config", "missing.json"]).status.code(), Some(3));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"family": {"kind": "nope"}}"#).unwrap();
    assert_eq!(procure(&["simulate", "--config", path.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn towers_prints_endpoints() {
    let out = procure(&["towers", "--vmax", "1", "--n", "1073741824", "--profile", "default"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("endpoints 1, 1e7, 1.073741824e9"), "{text}");
    assert!(text.contains("sequence bound holds"), "{text}");
}

#[test]
fn lowerbound_table() {
    let args = ["lowerbound", "--n", "64", "--trials", "2000", "--seed", "7"];
    let first = procure(&args);
    assert_eq!(first.status.code(), Some(0));
    let text = stdout(&first);
    assert!(text.contains("E[OPT] = 4.0"), "{text}");
    // One row per price index 0..=6 after the two header lines and column titles.
    assert_eq!(text.lines().count(), 3 + 7, "{text}");
    assert_eq!(stdout(&procure(&args)), text);
}

#[test]
fn rounds_check_passes() {
    let out = procure(&["rounds-check", "--n", "50", "--trials", "20000", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
}

#[test]
fn simulate_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 6);
    let out_dir = dir.path().join("out");
    let out = procure(&["simulate", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["passed"], true);
    assert!(out_dir.join("summary.json").exists());

    let records = out_dir.join("records.jsonl");
    let replay = procure(&["audit-replay", "--config", config.to_str().unwrap(), "--records", records.to_str().unwrap()]);
    assert_eq!(replay.status.code(), Some(0), "{}", stdout(&replay));

    let text = std::fs::read_to_string(&records).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    lines[2]["payments"] = serde_json::json!(5.0);
    let tampered = dir.path().join("tampered.jsonl");
    let body: String = lines.iter().map(|v| format!("{v}\n")).collect();
    std::fs::write(&tampered, body).unwrap();
    let replay = procure(&["audit-replay", "--config", config.to_str().unwrap(), "--records", tampered.to_str().unwrap()]);
    assert_eq!(replay.status.code(), Some(2));
}

#[test]
fn predict_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = procure(&[
        "predict", "--n", "4096", "--k", "512", "--ratios", "0.1,1000", "--trials", "4", "--walks", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["predict.csv", "predict.svg", "walks_0.1.csv", "walks_1000.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}
