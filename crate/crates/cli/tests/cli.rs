use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn puriscope(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_puriscope"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("PURISCOPE_SEED")
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn identities_writes_schema_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = puriscope(&["identities", "--trials", "10", "--seed", "7"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("identities.json"));
    for key in ["experiment", "config", "results", "summary", "seed", "version", "timestamp"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["seed"], 7);
    assert_eq!(v["config"]["trials"], 10);
    assert_eq!(v["summary"]["pass"], true);
    assert!(v["version"].as_str().unwrap().starts_with('v'));
}

#[test]
fn same_seed_gives_identical_results_except_timestamp() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["cooling", "--n", "2,3", "--trials", "4", "--budget", "4000", "--seed", "3"];
    assert_eq!(puriscope(&args, a.path()).status.code(), Some(0));
    assert_eq!(puriscope(&args, b.path()).status.code(), Some(0));
    let strip = |p: &Path| {
        let mut v = read_json(&p.join("cooling.json"));
        v.as_object_mut().unwrap().remove("timestamp");
        serde_json::to_string_pretty(&v).unwrap()
    };
    assert_eq!(strip(a.path()), strip(b.path()));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_puriscope"))
        .args(["identities", "--trials", "2", "--out"])
        .arg(dir.path())
        .env("PURISCOPE_SEED", "41")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(read_json(&dir.path().join("identities.json"))["seed"], 41);
}

#[test]
fn csv_format_adds_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = puriscope(
        &[
            "separation",
            "--task",
            "purity",
            "--n",
            "2..3",
            "--budget",
            "300",
            "--trials",
            "4",
            "--format",
            "csv",
            "--jobs",
            "1",
        ],
        dir.path(),
    );
    assert!(matches!(o.status.code(), Some(0) | Some(3)), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("separation.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.contains("strategy") && header.contains('n'), "{header}");
    assert!(dir.path().join("separation.json").exists());
}

#[test]
fn blind_estimation_reports_estimate_and_keep_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let o = puriscope(&["crypto-blind", "--n", "4", "--rounds", "10000", "--seed", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let v = read_json(&dir.path().join("crypto-blind.json"));
    let row = &v["results"][0];
    assert!(row.get("client_estimate").is_some() && row.get("truth").is_some() && row.get("keep_fraction").is_some());
}

#[test]
fn precondition_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = puriscope(&["moment", "--n", "2", "--rank", "4", "--ancilla", "1", "--trials", "2"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn threshold_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = puriscope(&["moment", "--n", "2", "--budget", "4", "--trials", "3", "--seed", "1"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("moment.json").exists());
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_64() {
    let dir = tempfile::tempdir().unwrap();
    let o = puriscope(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}
